#include "saip/lhpf_stem.hpp"

#include <cmath>
#include <numbers>

#include "saip/layers.hpp"

namespace saip::lhpf {

template <typename T>
BasicTensor<T> hamming_window(int k) {
  if (k < 3 || k % 2 == 0) throw ShapeError("Hamming window size must be odd and >= 3, got " + std::to_string(k));
  std::vector<double> h(static_cast<std::size_t>(k));
  for (int n = 0; n < k; ++n) h[static_cast<std::size_t>(n)] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (k - 1));
  BasicTensor<T> out(Shape{k, k});
  for (int p = 0; p < k; ++p)
    for (int q = 0; q < k; ++q) out[p * k + q] = static_cast<T>(h[static_cast<std::size_t>(p)] * h[static_cast<std::size_t>(q)]);
  return out;
}

template <typename T>
Var<T> modulated_kernels(Var<T> w, int k) {
  const auto& s = w.shape();
  if (s.size() != 3 || s[1] != 1 || s[2] != Index(k) * k) {
    throw ShapeError("Lhpf weight must be (C, 1, " + std::to_string(k * k) + "), got " + shape_to_string(s));
  }
  auto window = w.tape->constant(hamming_window<T>(k).reshaped(Shape{1, 1, Index(k) * k}));
  auto weighted = ops::mul(ops::softmax(w, 2), window);
  auto normalized = ops::div(weighted, ops::sum_axis(weighted, 2));
  return ops::reshape(normalized, Shape{s[0], 1, k, k});
}

template <typename T>
Var<T> lhpf_layer(Var<T> x, Var<T> w, int k) {
  if (x.shape().size() != 4 || x.dim(1) != w.dim(0)) {
    throw ShapeError("Lhpf input " + shape_to_string(x.shape()) + " does not match weight " +
                     shape_to_string(w.shape()) + " in dimension 1");
  }
  return ops::depthwise_highpass(x, modulated_kernels(w, k));
}

template <typename T>
Var<T> lhpf_layer(Context<T>& ctx, const std::string& name, Var<T> x, int k) {
  auto w = ctx.param(join_name(name, "weight"), Shape{x.dim(1), 1, Index(k) * k}, Init::zeros());
  return lhpf_layer(x, w, k);
}

template <typename T>
Var<T> stem_forward(Context<T>& ctx, const std::string& name, Var<T> image, const StemConfig& config) {
  if (image.shape().size() != 4 || image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0) {
    throw ShapeError("stem input must be NCHW with H, W divisible by 4, got " + shape_to_string(image.shape()));
  }
  auto down = [&](const std::string& layer, Var<T> x) {
    layers::ConvLayer c;
    c.in_channels = x.dim(1);
    c.out_channels = x.dim(1);
    c.spec.stride = 2;
    return layers::conv(ctx, join_name(name, layer), x, c);
  };
  auto x = lhpf_layer(ctx, join_name(name, "lhpf1"), image, config.kernel);
  x = layers::pointwise(ctx, join_name(name, "pw1"), x, config.hidden_channels);
  x = down("down1", x);
  x = ops::relu(layers::batch_norm(ctx, join_name(name, "bn1"), x));
  x = lhpf_layer(ctx, join_name(name, "lhpf2"), x, config.kernel);
  x = layers::pointwise(ctx, join_name(name, "pw2"), x, config.out_channels);
  return down("down2", x);
}

#define SAIP_INSTANTIATE_LHPF(T)                                                                  \
  template BasicTensor<T> hamming_window<T>(int);                                                \
  template Var<T> modulated_kernels<T>(Var<T>, int);                                             \
  template Var<T> lhpf_layer<T>(Var<T>, Var<T>, int);                                            \
  template Var<T> lhpf_layer<T>(Context<T>&, const std::string&, Var<T>, int);                   \
  template Var<T> stem_forward<T>(Context<T>&, const std::string&, Var<T>, const StemConfig&);

SAIP_INSTANTIATE_LHPF(float)
SAIP_INSTANTIATE_LHPF(double)

}  // namespace saip::lhpf
