#include <Eigen/Core>
#include <cmath>

#include "ops_internal.hpp"

namespace saip::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

struct ConvGeometry {
  Index n, cin, h, w, cout, ho, wo, cg, og;
  ConvSpec spec;
};

/// Source index of an output tap along one axis, or -1 for a zero-padded tap.
inline Index tap_source(Index o, int k, const ConvSpec& s, Index extent) {
  const Index i = o * s.stride - s.pad() + static_cast<Index>(k) * s.dilation;
  if (i >= 0 && i < extent) return i;
  return s.padding == Padding::replicate ? detail::clamp_index(i, extent) : Index(-1);
}

/// Unfolds one sample/group into a (cg*k*k, ho*wo) column matrix.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int k = g.spec.kernel;
  const Index hw = g.ho * g.wo;
  for (Index c = 0; c < g.cg; ++c) {
    const T* xc = x + c * g.h * g.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * hw;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = tap_source(oy, ky, g.spec, g.h);
          T* dst = row + oy * g.wo;
          if (iy < 0) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = tap_source(ox, kx, g.spec, g.w);
            dst[ox] = ix < 0 ? T(0) : xc[iy * g.w + ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  const int k = g.spec.kernel;
  const Index hw = g.ho * g.wo;
  for (Index c = 0; c < g.cg; ++c) {
    T* xc = dx + c * g.h * g.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * hw;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = tap_source(oy, ky, g.spec, g.h);
          if (iy < 0) continue;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = tap_source(ox, kx, g.spec, g.w);
            if (ix >= 0) xc[iy * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.spec.kernel == 1 && g.spec.stride == 1;
}

template <typename T>
void conv_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* b, const ConvGeometry& g,
                  BasicTensor<T>& out) {
  const Index kk = static_cast<Index>(g.spec.kernel) * g.spec.kernel;
  const Index hw_out = g.ho * g.wo;
  std::vector<T> col(is_pointwise(g) ? 0 : static_cast<std::size_t>(g.cg * kk * hw_out));
  for (Index n = 0; n < g.n; ++n) {
    for (Index grp = 0; grp < g.spec.groups; ++grp) {
      const T* xg = x.data().data() + (n * g.cin + grp * g.cg) * g.h * g.w;
      const T* colp = xg;
      if (!is_pointwise(g)) {
        im2col(xg, g, col.data());
        colp = col.data();
      }
      MapC<T> W(w.data().data() + grp * g.og * g.cg * kk, g.og, g.cg * kk);
      MapC<T> C(colp, g.cg * kk, hw_out);
      Map<T> Y(out.data().data() + (n * g.cout + grp * g.og) * hw_out, g.og, hw_out);
      Y.noalias() = W * C;
    }
  }
  if (b) {
    auto o = out.data();
    const auto bd = b->data();
    for (Index n = 0; n < g.n; ++n)
      for (Index c = 0; c < g.cout; ++c) {
        T* yc = o.data() + (n * g.cout + c) * hw_out;
        for (Index i = 0; i < hw_out; ++i) yc[i] += bd[static_cast<std::size_t>(c)];
      }
  }
}

template <typename T>
void conv_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy, const ConvGeometry& g,
                   BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db) {
  const Index kk = static_cast<Index>(g.spec.kernel) * g.spec.kernel;
  const Index hw_out = g.ho * g.wo;
  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(g.cg * kk * hw_out));
  std::vector<T> dcol(pointwise ? 0 : static_cast<std::size_t>(g.cg * kk * hw_out));
  for (Index n = 0; n < g.n; ++n) {
    for (Index grp = 0; grp < g.spec.groups; ++grp) {
      const T* xg = x.data().data() + (n * g.cin + grp * g.cg) * g.h * g.w;
      MapC<T> G(gy.data().data() + (n * g.cout + grp * g.og) * hw_out, g.og, hw_out);
      MapC<T> W(w.data().data() + grp * g.og * g.cg * kk, g.og, g.cg * kk);
      if (dw) {
        const T* colp = xg;
        if (!pointwise) {
          im2col(xg, g, col.data());
          colp = col.data();
        }
        MapC<T> C(colp, g.cg * kk, hw_out);
        Map<T> dW(dw->data().data() + grp * g.og * g.cg * kk, g.og, g.cg * kk);
        dW.noalias() += G * C.transpose();
      }
      if (dx) {
        T* dxg = dx->data().data() + (n * g.cin + grp * g.cg) * g.h * g.w;
        if (pointwise) {
          Map<T> dX(dxg, g.cg, hw_out);
          dX.noalias() += W.transpose() * G;
        } else {
          Map<T> dC(dcol.data(), g.cg * kk, hw_out);
          dC.noalias() = W.transpose() * G;
          col2im(dcol.data(), g, dxg);
        }
      }
    }
  }
  if (db) {
    auto d = db->data();
    const auto gd = gy.data();
    for (Index n = 0; n < g.n; ++n)
      for (Index c = 0; c < g.cout; ++c) {
        const T* gc = gd.data() + (n * g.cout + c) * hw_out;
        T acc = 0;
        for (Index i = 0; i < hw_out; ++i) acc += gc[i];
        d[static_cast<std::size_t>(c)] += acc;
      }
  }
}

}  // namespace

Index conv_output_size(Index in, const ConvSpec& spec) {
  return (in + 2 * spec.pad() - static_cast<Index>(spec.dilation) * (spec.kernel - 1) - 1) / spec.stride + 1;
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, std::type_identity_t<std::optional<Var<T>>> bias, const ConvSpec& spec) {
  const auto& x = input.value();
  const auto& w = weight.value();
  detail::require_rank(x.shape(), 4, "conv2d input");
  detail::require_rank(w.shape(), 4, "conv2d weight");
  if (spec.kernel <= 0 || spec.kernel % 2 == 0) {
    throw ShapeError("conv2d kernel size must be odd and positive, got " + std::to_string(spec.kernel));
  }
  if (spec.stride <= 0 || spec.dilation <= 0 || spec.groups <= 0) {
    throw ShapeError("conv2d stride, dilation and groups must be positive");
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), 0, 0, 0, 0, spec};
  if (g.cin % spec.groups != 0) {
    throw ShapeError("conv2d input channels (dimension 1) " + std::to_string(g.cin) + " not divisible by groups " +
                     std::to_string(spec.groups));
  }
  if (g.cout % spec.groups != 0) {
    throw ShapeError("conv2d output channels (weight dimension 0) " + std::to_string(g.cout) +
                     " not divisible by groups " + std::to_string(spec.groups));
  }
  g.cg = g.cin / spec.groups;
  g.og = g.cout / spec.groups;
  if (w.dim(1) != g.cg) {
    throw ShapeError("conv2d weight dimension 1 is " + std::to_string(w.dim(1)) + ", expected in_channels/groups = " +
                     std::to_string(g.cg));
  }
  if (w.dim(2) != spec.kernel || w.dim(3) != spec.kernel) {
    throw ShapeError("conv2d weight spatial dimensions 2,3 " + shape_to_string(w.shape()) + " do not match kernel " +
                     std::to_string(spec.kernel));
  }
  if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != g.cout)) {
    throw ShapeError("conv2d bias dimension 0 must equal out_channels " + std::to_string(g.cout));
  }
  g.ho = conv_output_size(g.h, spec);
  g.wo = conv_output_size(g.w, spec);
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d input spatial size too small for the kernel");

  BasicTensor<T> out(Shape{g.n, g.cout, g.ho, g.wo});
  conv_forward(x, w, bias ? &bias->value() : nullptr, g, out);

  std::vector<Var<T>> parents{input, weight};
  if (bias) parents.push_back(*bias);
  return input.tape->record(std::move(out), parents,
                            [input, weight, g](const BasicTensor<T>& gy, std::span<BasicTensor<T>*> pg) {
                              conv_backward(input.value(), weight.value(), gy, g, pg[0], pg[1],
                                            pg.size() > 2 ? pg[2] : nullptr);
                            });
}

namespace {

template <typename T>
Var<T> svconv(Var<T> x, Var<T> kernels, bool centered) {
  const auto& xv = x.value();
  const auto& kv = kernels.value();
  detail::require_rank(xv.shape(), 4, "spatially_variant_conv feature");
  detail::require_rank(kv.shape(), 5, "spatially_variant_conv kernels");
  const Index n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const Index groups = kv.dim(1), taps = kv.dim(2);
  if (kv.dim(0) != n) throw ShapeError("spatially_variant_conv batch (dimension 0) mismatch");
  if (kv.dim(3) != h || kv.dim(4) != w) {
    throw ShapeError("spatially_variant_conv resolution mismatch: feature " + shape_to_string(xv.shape()) +
                     " vs kernel field " + shape_to_string(kv.shape()));
  }
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(taps))));
  if (static_cast<Index>(k) * k != taps || k % 2 == 0) {
    throw ShapeError("spatially_variant_conv tap dimension 2 must be K*K with odd K, got " + std::to_string(taps));
  }
  const int r = k / 2;
  const Index hw = h * w;

  BasicTensor<T> out(Shape{n, c * groups, h, w});
  {
    const T* xd = xv.data().data();
    const T* kd = kv.data().data();
    T* od = out.data().data();
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        const T* xc = xd + (b * c + ch) * hw;
        for (Index g = 0; g < groups; ++g) {
          T* oc = od + (b * c * groups + ch * groups + g) * hw;
          const T* kg = kd + (b * groups + g) * taps * hw;
          for (int p = -r; p <= r; ++p)
            for (int q = -r; q <= r; ++q) {
              const T* kt = kg + ((p + r) * k + (q + r)) * hw;
              for (Index i = 0; i < h; ++i) {
                const Index si = detail::clamp_index(i + p, h);
                for (Index j = 0; j < w; ++j) {
                  const T v = xc[si * w + detail::clamp_index(j + q, w)];
                  oc[i * w + j] += kt[i * w + j] * (centered ? v - xc[i * w + j] : v);
                }
              }
            }
        }
      }
  }
  return x.tape->record(std::move(out), {x, kernels},
                        [x, kernels, n, c, h, w, groups, taps, k, r, centered](const BasicTensor<T>& gy,
                                                                      std::span<BasicTensor<T>*> pg) {
                          const Index hw = h * w;
                          const T* xd = x.value().data().data();
                          const T* kd = kernels.value().data().data();
                          const T* gd = gy.data().data();
                          T* dx = pg[0] ? pg[0]->data().data() : nullptr;
                          T* dk = pg[1] ? pg[1]->data().data() : nullptr;
                          for (Index b = 0; b < n; ++b)
                            for (Index ch = 0; ch < c; ++ch) {
                              const T* xc = xd + (b * c + ch) * hw;
                              for (Index g = 0; g < groups; ++g) {
                                const T* gc = gd + (b * c * groups + ch * groups + g) * hw;
                                const Index kbase = (b * groups + g) * taps * hw;
                                for (int p = -r; p <= r; ++p)
                                  for (int q = -r; q <= r; ++q) {
                                    const Index toff = kbase + ((p + r) * k + (q + r)) * hw;
                                    for (Index i = 0; i < h; ++i) {
                                      const Index si = detail::clamp_index(i + p, h);
                                      for (Index j = 0; j < w; ++j) {
                                        const Index src = (b * c + ch) * hw + si * w + detail::clamp_index(j + q, w);
                                        const Index ctr = (b * c + ch) * hw + i * w + j;
                                        const T gv = gc[i * w + j];
                                        const T v = xc[src - (b * c + ch) * hw];
                                        if (dk) dk[toff + i * w + j] += gv * (centered ? v - xc[i * w + j] : v);
                                        if (dx) {
                                          dx[src] += gv * kd[toff + i * w + j];
                                          if (centered) dx[ctr] -= gv * kd[toff + i * w + j];
                                        }
                                      }
                                    }
                                  }
                              }
                            }
                        });
}

}  // namespace

template <typename T>
Var<T> spatially_variant_conv(Var<T> x, Var<T> kernels) {
  return svconv(x, kernels, false);
}

template <typename T>
Var<T> spatially_variant_conv_centered(Var<T> x, Var<T> kernels) {
  return svconv(x, kernels, true);
}

template <typename T>
Var<T> depthwise_highpass(Var<T> x, Var<T> kernels) {
  const auto& xv = x.value();
  const auto& kv = kernels.value();
  detail::require_rank(xv.shape(), 4, "depthwise_highpass input");
  detail::require_rank(kv.shape(), 4, "depthwise_highpass kernels");
  const Index n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int k = static_cast<int>(kv.dim(2));
  if (kv.dim(0) != c || kv.dim(1) != 1 || kv.dim(3) != k || k % 2 == 0) {
    throw ShapeError("depthwise_highpass kernels must be (" + std::to_string(c) + ", 1, K, K) with odd K, got " +
                     shape_to_string(kv.shape()));
  }
  const int r = k / 2;
  const Index hw = h * w;
  BasicTensor<T> out(xv.shape());
  {
    const T* xd = xv.data().data();
    const T* kd = kv.data().data();
    T* od = out.data().data();
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        const T* xc = xd + (b * c + ch) * hw;
        T* oc = od + (b * c + ch) * hw;
        for (int p = -r; p <= r; ++p)
          for (int q = -r; q <= r; ++q) {
            const T kt = kd[(ch * k + p + r) * k + q + r];
            for (Index i = 0; i < h; ++i) {
              const Index si = detail::clamp_index(i + p, h);
              for (Index j = 0; j < w; ++j) oc[i * w + j] += kt * (xc[i * w + j] - xc[si * w + detail::clamp_index(j + q, w)]);
            }
          }
      }
  }
  return x.tape->record(std::move(out), {x, kernels},
                        [x, kernels, n, c, h, w, k, r](const BasicTensor<T>& gy, std::span<BasicTensor<T>*> pg) {
                          const Index hw = h * w;
                          const T* xd = x.value().data().data();
                          const T* kd = kernels.value().data().data();
                          const T* gd = gy.data().data();
                          T* dx = pg[0] ? pg[0]->data().data() : nullptr;
                          T* dk = pg[1] ? pg[1]->data().data() : nullptr;
                          for (Index b = 0; b < n; ++b)
                            for (Index ch = 0; ch < c; ++ch) {
                              const Index base = (b * c + ch) * hw;
                              for (int p = -r; p <= r; ++p)
                                for (int q = -r; q <= r; ++q) {
                                  const Index tap = (ch * k + p + r) * k + q + r;
                                  const T kt = kd[tap];
                                  T acc = 0;
                                  for (Index i = 0; i < h; ++i) {
                                    const Index si = detail::clamp_index(i + p, h);
                                    for (Index j = 0; j < w; ++j) {
                                      const Index ctr = base + i * w + j;
                                      const Index src = base + si * w + detail::clamp_index(j + q, w);
                                      const T gv = gd[ctr];
                                      acc += gv * (xd[ctr] - xd[src]);
                                      if (dx) {
                                        dx[ctr] += gv * kt;
                                        dx[src] -= gv * kt;
                                      }
                                    }
                                  }
                                  if (dk) dk[tap] += acc;
                                }
                            }
                        });
}

template <typename T>
Var<T> local_similarity(Var<T> z, T eps) {
  const auto& zv = z.value();
  detail::require_rank(zv.shape(), 4, "local_similarity input");
  const Index n = zv.dim(0), c = zv.dim(1), h = zv.dim(2), w = zv.dim(3);
  const Index hw = h * w;
  constexpr int kNeighbors = 8;
  static constexpr int dy[kNeighbors] = {-1, -1, -1, 0, 0, 1, 1, 1};
  static constexpr int dx[kNeighbors] = {-1, 0, 1, -1, 1, -1, 0, 1};

  // Per-pixel regularized norms sqrt(|z|^2 + eps).
  std::vector<T> norms(static_cast<std::size_t>(n * hw));
  const T* zd = zv.data().data();
  for (Index b = 0; b < n; ++b)
    for (Index p = 0; p < hw; ++p) {
      T s = 0;
      for (Index ch = 0; ch < c; ++ch) {
        const T v = zd[(b * c + ch) * hw + p];
        s += v * v;
      }
      norms[static_cast<std::size_t>(b * hw + p)] = std::sqrt(s + eps);
    }

  BasicTensor<T> out(Shape{n, kNeighbors, h, w});
  T* od = out.data().data();
  for (Index b = 0; b < n; ++b)
    for (int t = 0; t < kNeighbors; ++t)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) {
          const Index p = i * w + j;
          const Index q = detail::clamp_index(i + dy[t], h) * w + detail::clamp_index(j + dx[t], w);
          T dot = 0;
          for (Index ch = 0; ch < c; ++ch) dot += zd[(b * c + ch) * hw + p] * zd[(b * c + ch) * hw + q];
          od[(b * kNeighbors + t) * hw + p] =
              dot / (norms[static_cast<std::size_t>(b * hw + p)] * norms[static_cast<std::size_t>(b * hw + q)]);
        }

  return z.tape->record(std::move(out), {z},
                        [z, norms = std::move(norms), n, c, h, w](const BasicTensor<T>& gy,
                                                                  std::span<BasicTensor<T>*> pg) {
                          const Index hw = h * w;
                          const T* zd = z.value().data().data();
                          const T* gd = gy.data().data();
                          T* dz = pg[0]->data().data();
                          for (Index b = 0; b < n; ++b)
                            for (int t = 0; t < kNeighbors; ++t)
                              for (Index i = 0; i < h; ++i)
                                for (Index j = 0; j < w; ++j) {
                                  const Index p = i * w + j;
                                  const Index q = detail::clamp_index(i + dy[t], h) * w + detail::clamp_index(j + dx[t], w);
                                  const T g = gd[(b * kNeighbors + t) * hw + p];
                                  if (g == T(0)) continue;
                                  const T na = norms[static_cast<std::size_t>(b * hw + p)];
                                  const T nb = norms[static_cast<std::size_t>(b * hw + q)];
                                  T dot = 0;
                                  for (Index ch = 0; ch < c; ++ch) dot += zd[(b * c + ch) * hw + p] * zd[(b * c + ch) * hw + q];
                                  const T inv = T(1) / (na * nb);
                                  const T ca = dot * inv / (na * na);
                                  const T cb = dot * inv / (nb * nb);
                                  for (Index ch = 0; ch < c; ++ch) {
                                    const T a = zd[(b * c + ch) * hw + p];
                                    const T v = zd[(b * c + ch) * hw + q];
                                    dz[(b * c + ch) * hw + p] += g * (v * inv - a * ca);
                                    dz[(b * c + ch) * hw + q] += g * (a * inv - v * cb);
                                  }
                                }
                        });
}

template Var<float> conv2d<float>(Var<float>, Var<float>, std::optional<Var<float>>, const ConvSpec&);
template Var<double> conv2d<double>(Var<double>, Var<double>, std::optional<Var<double>>, const ConvSpec&);
SAIP_INSTANTIATE_BINARY(spatially_variant_conv)
SAIP_INSTANTIATE_BINARY(spatially_variant_conv_centered)
SAIP_INSTANTIATE_BINARY(depthwise_highpass)
template Var<float> local_similarity<float>(Var<float>, float);
template Var<double> local_similarity<double>(Var<double>, double);

}  // namespace saip::ops
