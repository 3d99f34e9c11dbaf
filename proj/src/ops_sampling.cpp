#include <cmath>
#include <limits>

#include "ops_internal.hpp"

namespace saip::ops {
namespace {

/// Bilinear stencil along one axis for a clamped coordinate.
template <typename T>
struct Stencil {
  Index lo, hi;
  T frac;
  bool clamped;  // coordinate fell outside [0, extent-1]
};

template <typename T>
Stencil<T> stencil(T coord, Index extent) {
  const T top = static_cast<T>(extent - 1);
  Stencil<T> s{};
  T c = coord;
  s.clamped = false;
  if (c <= T(0)) {
    s.clamped = c < T(0);
    c = T(0);
  } else if (c >= top) {
    s.clamped = c > top;
    c = top;
  }
  s.lo = static_cast<Index>(std::floor(c));
  if (s.lo > extent - 1) s.lo = extent - 1;
  s.hi = s.lo + 1 < extent ? s.lo + 1 : s.lo;
  s.frac = c - static_cast<T>(s.lo);
  return s;
}

}  // namespace

template <typename T>
Var<T> bilinear_sample(Var<T> x, Var<T> coords) {
  const auto& xv = x.value();
  const auto& cv = coords.value();
  detail::require_rank(xv.shape(), 4, "bilinear_sample input");
  detail::require_rank(cv.shape(), 4, "bilinear_sample coords");
  const Index n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (cv.dim(0) != n || cv.dim(1) != 2) {
    throw ShapeError("bilinear_sample coords must be (N, 2, Ho, Wo), got " + shape_to_string(cv.shape()));
  }
  const Index ho = cv.dim(2), wo = cv.dim(3), hwo = ho * wo, hw = h * w;

  BasicTensor<T> out(Shape{n, c, ho, wo});
  const T* xd = xv.data().data();
  const T* cd = cv.data().data();
  T* od = out.data().data();
  for (Index b = 0; b < n; ++b)
    for (Index p = 0; p < hwo; ++p) {
      if (!std::isfinite(cd[(b * 2) * hwo + p]) || !std::isfinite(cd[(b * 2 + 1) * hwo + p])) {
        for (Index ch = 0; ch < c; ++ch) od[(b * c + ch) * hwo + p] = std::numeric_limits<T>::quiet_NaN();
        continue;
      }
      const auto sy = stencil(cd[(b * 2) * hwo + p], h);
      const auto sx = stencil(cd[(b * 2 + 1) * hwo + p], w);
      const T w00 = (T(1) - sy.frac) * (T(1) - sx.frac), w01 = (T(1) - sy.frac) * sx.frac;
      const T w10 = sy.frac * (T(1) - sx.frac), w11 = sy.frac * sx.frac;
      for (Index ch = 0; ch < c; ++ch) {
        const T* xc = xd + (b * c + ch) * hw;
        od[(b * c + ch) * hwo + p] = w00 * xc[sy.lo * w + sx.lo] + w01 * xc[sy.lo * w + sx.hi] +
                                     w10 * xc[sy.hi * w + sx.lo] + w11 * xc[sy.hi * w + sx.hi];
      }
    }

  return x.tape->record(std::move(out), {x, coords},
                        [x, coords, n, c, h, w, hwo](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
                          const Index hw = h * w;
                          const T* xd = x.value().data().data();
                          const T* cd = coords.value().data().data();
                          const T* gd = g.data().data();
                          T* dx = pg[0] ? pg[0]->data().data() : nullptr;
                          T* dc = pg[1] ? pg[1]->data().data() : nullptr;
                          for (Index b = 0; b < n; ++b)
                            for (Index p = 0; p < hwo; ++p) {
                              if (!std::isfinite(cd[(b * 2) * hwo + p]) || !std::isfinite(cd[(b * 2 + 1) * hwo + p])) continue;
                              const auto sy = stencil(cd[(b * 2) * hwo + p], h);
                              const auto sx = stencil(cd[(b * 2 + 1) * hwo + p], w);
                              const T fy = sy.frac, fx = sx.frac;
                              T gy_acc = 0, gx_acc = 0;
                              for (Index ch = 0; ch < c; ++ch) {
                                const T gv = gd[(b * c + ch) * hwo + p];
                                const Index base = (b * c + ch) * hw;
                                const T v00 = xd[base + sy.lo * w + sx.lo], v01 = xd[base + sy.lo * w + sx.hi];
                                const T v10 = xd[base + sy.hi * w + sx.lo], v11 = xd[base + sy.hi * w + sx.hi];
                                if (dx) {
                                  dx[base + sy.lo * w + sx.lo] += gv * (T(1) - fy) * (T(1) - fx);
                                  dx[base + sy.lo * w + sx.hi] += gv * (T(1) - fy) * fx;
                                  dx[base + sy.hi * w + sx.lo] += gv * fy * (T(1) - fx);
                                  dx[base + sy.hi * w + sx.hi] += gv * fy * fx;
                                }
                                gy_acc += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
                                gx_acc += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                              }
                              if (dc) {
                                if (!sy.clamped && sy.hi != sy.lo) dc[(b * 2) * hwo + p] += gy_acc;
                                if (!sx.clamped && sx.hi != sx.lo) dc[(b * 2 + 1) * hwo + p] += gx_acc;
                              }
                            }
                        });
}

template <typename T>
Var<T> resize_bilinear(Var<T> x, Index out_h, Index out_w) {
  const auto& xv = x.value();
  detail::require_rank(xv.shape(), 4, "resize_bilinear input");
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear target size must be positive");
  const Index n = xv.dim(0), h = xv.dim(2), w = xv.dim(3);
  BasicTensor<T> grid(Shape{n, 2, out_h, out_w});
  const T sy = static_cast<T>(h) / static_cast<T>(out_h);
  const T sx = static_cast<T>(w) / static_cast<T>(out_w);
  for (Index b = 0; b < n; ++b)
    for (Index i = 0; i < out_h; ++i)
      for (Index j = 0; j < out_w; ++j) {
        grid.at({b, 0, i, j}) = (static_cast<T>(i) + T(0.5)) * sy - T(0.5);
        grid.at({b, 1, i, j}) = (static_cast<T>(j) + T(0.5)) * sx - T(0.5);
      }
  return bilinear_sample(x, x.tape->constant(std::move(grid)));
}

SAIP_INSTANTIATE_BINARY(bilinear_sample)
template Var<float> resize_bilinear<float>(Var<float>, Index, Index);
template Var<double> resize_bilinear<double>(Var<double>, Index, Index);

}  // namespace saip::ops
