#include <cmath>

#include "ops_internal.hpp"

namespace saip::ops {

template <typename T>
Var<T> layer_norm(Var<T> x, int axis, Var<T> gamma, Var<T> beta, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm eps must be positive");
  const auto& xv = x.value();
  axis = detail::normalize_axis(axis, xv.rank());
  const auto v = detail::axis_view(xv.shape(), axis);
  if (gamma.value().numel() != v.extent || beta.value().numel() != v.extent) {
    throw ShapeError("layer_norm affine parameters must have " + std::to_string(v.extent) + " entries (dimension " +
                     std::to_string(axis) + ")");
  }
  const Index groups = v.outer * v.inner;
  BasicTensor<T> xhat(xv.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(groups));
  const T* xd = xv.data().data();
  T* hd = xhat.data().data();
  for (Index a = 0; a < v.outer; ++a)
    for (Index b = 0; b < v.inner; ++b) {
      const Index base = a * v.extent * v.inner + b;
      T m = 0;
      for (Index k = 0; k < v.extent; ++k) m += xd[base + k * v.inner];
      m /= static_cast<T>(v.extent);
      T var = 0;
      for (Index k = 0; k < v.extent; ++k) {
        const T d = xd[base + k * v.inner] - m;
        var += d * d;
      }
      var /= static_cast<T>(v.extent);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(a * v.inner + b)] = is;
      for (Index k = 0; k < v.extent; ++k) hd[base + k * v.inner] = (xd[base + k * v.inner] - m) * is;
    }
  BasicTensor<T> out(xv.shape());
  const T* gm = gamma.value().data().data();
  const T* bt = beta.value().data().data();
  T* od = out.data().data();
  for (Index a = 0; a < v.outer; ++a)
    for (Index k = 0; k < v.extent; ++k)
      for (Index b = 0; b < v.inner; ++b) {
        const Index i = (a * v.extent + k) * v.inner + b;
        od[i] = hd[i] * gm[k] + bt[k];
      }

  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [gamma, v, xhat = std::move(xhat), inv_std = std::move(inv_std)](const BasicTensor<T>& g,
                                                                      std::span<BasicTensor<T>*> pg) {
        const T* gd = g.data().data();
        const T* hd = xhat.data().data();
        const T* gm = gamma.value().data().data();
        if (pg[1] || pg[2]) {
          for (Index a = 0; a < v.outer; ++a)
            for (Index k = 0; k < v.extent; ++k)
              for (Index b = 0; b < v.inner; ++b) {
                const Index i = (a * v.extent + k) * v.inner + b;
                if (pg[1]) pg[1]->data()[static_cast<std::size_t>(k)] += gd[i] * hd[i];
                if (pg[2]) pg[2]->data()[static_cast<std::size_t>(k)] += gd[i];
              }
        }
        if (!pg[0]) return;
        T* dx = pg[0]->data().data();
        const T n = static_cast<T>(v.extent);
        for (Index a = 0; a < v.outer; ++a)
          for (Index b = 0; b < v.inner; ++b) {
            const Index base = a * v.extent * v.inner + b;
            T sum_g = 0, sum_gh = 0;
            for (Index k = 0; k < v.extent; ++k) {
              const Index i = base + k * v.inner;
              const T dh = gd[i] * gm[k];
              sum_g += dh;
              sum_gh += dh * hd[i];
            }
            const T is = inv_std[static_cast<std::size_t>(a * v.inner + b)];
            for (Index k = 0; k < v.extent; ++k) {
              const Index i = base + k * v.inner;
              const T dh = gd[i] * gm[k];
              dx[i] += is * (dh - sum_g / n - hd[i] * sum_gh / n);
            }
          }
      });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BasicTensor<T>& running_mean, BasicTensor<T>& running_var,
                  bool training, T momentum, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("batch_norm eps must be positive");
  const auto& xv = x.value();
  detail::require_rank(xv.shape(), 4, "batch_norm input");
  const Index n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (gamma.value().numel() != c || beta.value().numel() != c || running_mean.numel() != c || running_var.numel() != c) {
    throw ShapeError("batch_norm parameters must have " + std::to_string(c) + " entries (dimension 1)");
  }
  if (training && n < 2) {
    throw std::invalid_argument("batch_norm in training mode needs batch size >= 2, got " + std::to_string(n));
  }
  const T* xd = xv.data().data();
  std::vector<T> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  const Index count = n * hw;
  for (Index ch = 0; ch < c; ++ch) {
    T m, var;
    if (training) {
      double s = 0;
      for (Index b = 0; b < n; ++b)
        for (Index i = 0; i < hw; ++i) s += xd[(b * c + ch) * hw + i];
      m = static_cast<T>(s / static_cast<double>(count));
      double sq = 0;
      for (Index b = 0; b < n; ++b)
        for (Index i = 0; i < hw; ++i) {
          const double d = xd[(b * c + ch) * hw + i] - m;
          sq += d * d;
        }
      var = static_cast<T>(sq / static_cast<double>(count));
      const T unbiased = static_cast<T>(sq / static_cast<double>(count - 1));
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * m;
      running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
    } else {
      m = running_mean[ch];
      var = running_var[ch];
    }
    mean[static_cast<std::size_t>(ch)] = m;
    inv_std[static_cast<std::size_t>(ch)] = T(1) / std::sqrt(var + eps);
  }

  BasicTensor<T> out(xv.shape());
  T* od = out.data().data();
  const T* gm = gamma.value().data().data();
  const T* bt = beta.value().data().data();
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const T m = mean[static_cast<std::size_t>(ch)], is = inv_std[static_cast<std::size_t>(ch)];
      for (Index i = 0; i < hw; ++i) {
        const Index k = (b * c + ch) * hw + i;
        od[k] = (xd[k] - m) * is * gm[ch] + bt[ch];
      }
    }

  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, training, n, c, hw, mean = std::move(mean), inv_std = std::move(inv_std)](
          const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
        const T* xd = x.value().data().data();
        const T* gd = g.data().data();
        const T* gm = gamma.value().data().data();
        const T count = static_cast<T>(n * hw);
        for (Index ch = 0; ch < c; ++ch) {
          const T m = mean[static_cast<std::size_t>(ch)], is = inv_std[static_cast<std::size_t>(ch)];
          T sum_g = 0, sum_gh = 0;
          for (Index b = 0; b < n; ++b)
            for (Index i = 0; i < hw; ++i) {
              const Index k = (b * c + ch) * hw + i;
              sum_g += gd[k];
              sum_gh += gd[k] * (xd[k] - m) * is;
            }
          if (pg[1]) pg[1]->data()[static_cast<std::size_t>(ch)] += sum_gh;
          if (pg[2]) pg[2]->data()[static_cast<std::size_t>(ch)] += sum_g;
          if (!pg[0]) continue;
          T* dx = pg[0]->data().data();
          const T scale = gm[ch] * is;
          for (Index b = 0; b < n; ++b)
            for (Index i = 0; i < hw; ++i) {
              const Index k = (b * c + ch) * hw + i;
              if (training) {
                const T h = (xd[k] - m) * is;
                dx[k] += scale * (gd[k] - sum_g / count - h * sum_gh / count);
              } else {
                dx[k] += scale * gd[k];
              }
            }
        }
      });
}

template Var<float> layer_norm<float>(Var<float>, int, Var<float>, Var<float>, float);
template Var<double> layer_norm<double>(Var<double>, int, Var<double>, Var<double>, double);
template Var<float> batch_norm<float>(Var<float>, Var<float>, Var<float>, Tensor&, Tensor&, bool, float, float);
template Var<double> batch_norm<double>(Var<double>, Var<double>, Var<double>, Tensor64&, Tensor64&, bool, double,
                                        double);

}  // namespace saip::ops
