#include <algorithm>
#include <cmath>
#include <numbers>

#include "ops_internal.hpp"

namespace saip::ops {
namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const Index da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const Index db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b) + " at dimension " +
                       std::to_string(i));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// Flat source offsets of `src` for every element of `out` under broadcasting.
std::vector<Index> broadcast_offsets(const Shape& src, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<Index> stride(rank, 0);
  Index s = 1;
  for (std::size_t k = 0; k < src.size(); ++k) {
    const std::size_t i = src.size() - 1 - k;
    const std::size_t o = rank - 1 - k;
    stride[o] = src[i] == 1 ? 0 : s;
    s *= src[i];
  }
  const Index n = shape_numel(out);
  std::vector<Index> offsets(static_cast<std::size_t>(n));
  std::vector<Index> idx(rank, 0);
  Index off = 0;
  for (Index e = 0; e < n; ++e) {
    offsets[static_cast<std::size_t>(e)] = off;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < out[d]) break;
      off -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return offsets;
}

enum class BinOp { add, sub, mul, div };

template <typename T>
Var<T> binary(Var<T> a, Var<T> b, BinOp op) {
  const auto& av = a.value();
  const auto& bv = b.value();
  auto f = [op](T x, T y) -> T {
    switch (op) {
      case BinOp::add: return x + y;
      case BinOp::sub: return x - y;
      case BinOp::mul: return x * y;
      case BinOp::div: return x / y;
    }
    return T(0);
  };

  if (av.shape() == bv.shape()) {
    BasicTensor<T> out(av.shape());
    const auto x = av.data();
    const auto y = bv.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
    return a.tape->record(std::move(out), {a, b}, [a, b, op](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
      const auto x = a.value().data();
      const auto y = b.value().data();
      const auto gd = g.data();
      if (pg[0]) {
        auto d = pg[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) {
          switch (op) {
            case BinOp::add:
            case BinOp::sub: d[i] += gd[i]; break;
            case BinOp::mul: d[i] += gd[i] * y[i]; break;
            case BinOp::div: d[i] += gd[i] / y[i]; break;
          }
        }
      }
      if (pg[1]) {
        auto d = pg[1]->data();
        for (std::size_t i = 0; i < d.size(); ++i) {
          switch (op) {
            case BinOp::add: d[i] += gd[i]; break;
            case BinOp::sub: d[i] -= gd[i]; break;
            case BinOp::mul: d[i] += gd[i] * x[i]; break;
            case BinOp::div: d[i] -= gd[i] * x[i] / (y[i] * y[i]); break;
          }
        }
      }
    });
  }

  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  auto oa = broadcast_offsets(av.shape(), out_shape);
  auto ob = broadcast_offsets(bv.shape(), out_shape);
  BasicTensor<T> out(out_shape);
  {
    const auto x = av.data();
    const auto y = bv.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[static_cast<std::size_t>(oa[i])], y[static_cast<std::size_t>(ob[i])]);
  }
  return a.tape->record(
      std::move(out), {a, b},
      [a, b, op, oa = std::move(oa), ob = std::move(ob)](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
        const auto x = a.value().data();
        const auto y = b.value().data();
        const auto gd = g.data();
        for (std::size_t i = 0; i < gd.size(); ++i) {
          const auto ia = static_cast<std::size_t>(oa[i]);
          const auto ib = static_cast<std::size_t>(ob[i]);
          T da = 0, db = 0;
          switch (op) {
            case BinOp::add: da = gd[i]; db = gd[i]; break;
            case BinOp::sub: da = gd[i]; db = -gd[i]; break;
            case BinOp::mul: da = gd[i] * y[ib]; db = gd[i] * x[ia]; break;
            case BinOp::div: da = gd[i] / y[ib]; db = -gd[i] * x[ia] / (y[ib] * y[ib]); break;
          }
          if (pg[0]) pg[0]->data()[ia] += da;
          if (pg[1]) pg[1]->data()[ib] += db;
        }
      });
}

/// Elementwise map; df gives dy/dx as a function of x.
template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F f, D df) {
  const auto& xv = x.value();
  BasicTensor<T> out(xv.shape());
  const auto in = xv.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return x.tape->record(std::move(out), {x}, [x, df](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
    const auto in = x.value().data();
    const auto gd = g.data();
    auto d = pg[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i] * df(in[i]);
  });
}

}  // namespace

template <typename T> Var<T> add(Var<T> a, Var<T> b) { return binary(a, b, BinOp::add); }
template <typename T> Var<T> sub(Var<T> a, Var<T> b) { return binary(a, b, BinOp::sub); }
template <typename T> Var<T> mul(Var<T> a, Var<T> b) { return binary(a, b, BinOp::mul); }
template <typename T> Var<T> div(Var<T> a, Var<T> b) { return binary(a, b, BinOp::div); }

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T) { return factor; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T value) {
  return unary(x, [value](T v) { return v + value; }, [](T) { return T(1); });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <typename T>
Var<T> log(Var<T> x) {
  for (T v : x.value().data()) {
    if (!(v > T(0))) throw std::domain_error("log of non-positive value");
  }
  return unary(x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt(Var<T> x) {
  for (T v : x.value().data()) {
    if (v < T(0)) throw std::domain_error("sqrt of negative value");
  }
  return unary(x, [](T v) { return std::sqrt(v); }, [](T v) { return T(0.5) / std::sqrt(v); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  auto s = [](T v) { return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); };
  return unary(x, s, [s](T v) {
    const T y = s(v);
    return y * (T(1) - y);
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <typename T>
Var<T> sum(Var<T> x) {
  double acc = 0;
  for (T v : x.value().data()) acc += v;
  return x.tape->record(BasicTensor<T>::scalar(static_cast<T>(acc)), {x},
                        [](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
                          const T gv = g[0];
                          for (auto& d : pg[0]->data()) d += gv;
                        });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().numel()));
}

template <typename T>
Var<T> sum_axis(Var<T> x, int axis) {
  const auto& xv = x.value();
  axis = detail::normalize_axis(axis, xv.rank());
  const auto v = detail::axis_view(xv.shape(), axis);
  Shape out_shape = xv.shape();
  out_shape[static_cast<std::size_t>(axis)] = 1;
  BasicTensor<T> out(out_shape);
  const auto in = xv.data();
  auto o = out.data();
  for (Index a = 0; a < v.outer; ++a)
    for (Index k = 0; k < v.extent; ++k)
      for (Index b = 0; b < v.inner; ++b) o[static_cast<std::size_t>(a * v.inner + b)] += in[static_cast<std::size_t>((a * v.extent + k) * v.inner + b)];
  return x.tape->record(std::move(out), {x}, [v](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
    auto d = pg[0]->data();
    const auto gd = g.data();
    for (Index a = 0; a < v.outer; ++a)
      for (Index k = 0; k < v.extent; ++k)
        for (Index b = 0; b < v.inner; ++b) d[static_cast<std::size_t>((a * v.extent + k) * v.inner + b)] += gd[static_cast<std::size_t>(a * v.inner + b)];
  });
}

template <typename T>
Var<T> softmax(Var<T> x, int axis) {
  const auto& xv = x.value();
  axis = detail::normalize_axis(axis, xv.rank());
  const auto v = detail::axis_view(xv.shape(), axis);
  BasicTensor<T> out(xv.shape());
  const auto in = xv.data();
  auto o = out.data();
  for (Index a = 0; a < v.outer; ++a) {
    for (Index b = 0; b < v.inner; ++b) {
      const Index base = a * v.extent * v.inner + b;
      T mx = in[static_cast<std::size_t>(base)];
      for (Index k = 1; k < v.extent; ++k) mx = std::max(mx, in[static_cast<std::size_t>(base + k * v.inner)]);
      T total = 0;
      for (Index k = 0; k < v.extent; ++k) {
        const auto i = static_cast<std::size_t>(base + k * v.inner);
        o[i] = std::exp(in[i] - mx);
        total += o[i];
      }
      const T inv = T(1) / total;
      for (Index k = 0; k < v.extent; ++k) o[static_cast<std::size_t>(base + k * v.inner)] *= inv;
    }
  }
  auto y = out;
  return x.tape->record(std::move(out), {x},
                        [v, y = std::move(y)](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
                          const auto yd = y.data();
                          const auto gd = g.data();
                          auto d = pg[0]->data();
                          for (Index a = 0; a < v.outer; ++a) {
                            for (Index b = 0; b < v.inner; ++b) {
                              const Index base = a * v.extent * v.inner + b;
                              T dot = 0;
                              for (Index k = 0; k < v.extent; ++k) {
                                const auto i = static_cast<std::size_t>(base + k * v.inner);
                                dot += gd[i] * yd[i];
                              }
                              for (Index k = 0; k < v.extent; ++k) {
                                const auto i = static_cast<std::size_t>(base + k * v.inner);
                                d[i] += yd[i] * (gd[i] - dot);
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> log_softmax(Var<T> x, int axis) {
  const auto& xv = x.value();
  axis = detail::normalize_axis(axis, xv.rank());
  const auto v = detail::axis_view(xv.shape(), axis);
  BasicTensor<T> out(xv.shape());
  const auto in = xv.data();
  auto o = out.data();
  for (Index a = 0; a < v.outer; ++a) {
    for (Index b = 0; b < v.inner; ++b) {
      const Index base = a * v.extent * v.inner + b;
      T mx = in[static_cast<std::size_t>(base)];
      for (Index k = 1; k < v.extent; ++k) mx = std::max(mx, in[static_cast<std::size_t>(base + k * v.inner)]);
      T total = 0;
      for (Index k = 0; k < v.extent; ++k) total += std::exp(in[static_cast<std::size_t>(base + k * v.inner)] - mx);
      const T lse = mx + std::log(total);
      for (Index k = 0; k < v.extent; ++k) {
        const auto i = static_cast<std::size_t>(base + k * v.inner);
        o[i] = in[i] - lse;
      }
    }
  }
  auto y = out;
  return x.tape->record(std::move(out), {x},
                        [v, y = std::move(y)](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
                          const auto yd = y.data();
                          const auto gd = g.data();
                          auto d = pg[0]->data();
                          for (Index a = 0; a < v.outer; ++a) {
                            for (Index b = 0; b < v.inner; ++b) {
                              const Index base = a * v.extent * v.inner + b;
                              T gsum = 0;
                              for (Index k = 0; k < v.extent; ++k) gsum += gd[static_cast<std::size_t>(base + k * v.inner)];
                              for (Index k = 0; k < v.extent; ++k) {
                                const auto i = static_cast<std::size_t>(base + k * v.inner);
                                d[i] += gd[i] - std::exp(yd[i]) * gsum;
                              }
                            }
                          }
                        });
}

SAIP_INSTANTIATE_BINARY(add)
SAIP_INSTANTIATE_BINARY(sub)
SAIP_INSTANTIATE_BINARY(mul)
SAIP_INSTANTIATE_BINARY(div)
SAIP_INSTANTIATE_UNARY(exp)
SAIP_INSTANTIATE_UNARY(log)
SAIP_INSTANTIATE_UNARY(sqrt)
SAIP_INSTANTIATE_UNARY(sigmoid)
SAIP_INSTANTIATE_UNARY(relu)
SAIP_INSTANTIATE_UNARY(gelu)
SAIP_INSTANTIATE_UNARY(sum)
SAIP_INSTANTIATE_UNARY(mean)
template Var<float> scale<float>(Var<float>, float);
template Var<double> scale<double>(Var<double>, double);
template Var<float> add_scalar<float>(Var<float>, float);
template Var<double> add_scalar<double>(Var<double>, double);
template Var<float> sum_axis<float>(Var<float>, int);
template Var<double> sum_axis<double>(Var<double>, int);
template Var<float> softmax<float>(Var<float>, int);
template Var<double> softmax<double>(Var<double>, int);
template Var<float> log_softmax<float>(Var<float>, int);
template Var<double> log_softmax<double>(Var<double>, int);

}  // namespace saip::ops
