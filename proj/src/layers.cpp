#include "saip/layers.hpp"

namespace saip::layers {

template <typename T>
Var<T> conv(Context<T>& ctx, const std::string& name, Var<T> x, const ConvLayer& layer) {
  const Index in_per_group = layer.in_channels / layer.spec.groups;
  const Index fan_in = in_per_group * layer.spec.kernel * layer.spec.kernel;
  auto w = ctx.param(join_name(name, "weight"),
                     Shape{layer.out_channels, in_per_group, layer.spec.kernel, layer.spec.kernel},
                     layer.weight_init.value_or(Init::he(fan_in)));
  std::optional<Var<T>> b;
  if (layer.bias) b = ctx.param(join_name(name, "bias"), Shape{layer.out_channels}, Init::zeros());
  return ops::conv2d(x, w, b, layer.spec);
}

template <typename T>
Var<T> pointwise(Context<T>& ctx, const std::string& name, Var<T> x, Index out_channels) {
  ConvLayer layer;
  layer.in_channels = x.dim(1);
  layer.out_channels = out_channels;
  layer.spec.kernel = 1;
  return conv(ctx, name, x, layer);
}

template <typename T>
Var<T> batch_norm(Context<T>& ctx, const std::string& name, Var<T> x) {
  const Index c = x.dim(1);
  auto gamma = ctx.param(join_name(name, "gamma"), Shape{c}, Init::constant(1));
  auto beta = ctx.param(join_name(name, "beta"), Shape{c}, Init::zeros());
  auto& mean = ctx.buffer(join_name(name, "running_mean"), Shape{c}, T(0));
  auto& var = ctx.buffer(join_name(name, "running_var"), Shape{c}, T(1));
  return ops::batch_norm(x, gamma, beta, mean, var, ctx.training(), T(0.1), T(1e-5));
}

template <typename T>
Var<T> channel_norm(Context<T>& ctx, const std::string& name, Var<T> x) {
  const Index c = x.dim(1);
  auto gamma = ctx.param(join_name(name, "gamma"), Shape{c}, Init::constant(1));
  auto beta = ctx.param(join_name(name, "beta"), Shape{c}, Init::zeros());
  return ops::layer_norm(x, 1, gamma, beta, T(1e-5));
}

#define SAIP_INSTANTIATE_LAYERS(T)                                                                        \
  template Var<T> conv<T>(Context<T>&, const std::string&, Var<T>, const ConvLayer&);                    \
  template Var<T> pointwise<T>(Context<T>&, const std::string&, Var<T>, Index);                          \
  template Var<T> batch_norm<T>(Context<T>&, const std::string&, Var<T>);                                \
  template Var<T> channel_norm<T>(Context<T>&, const std::string&, Var<T>);

SAIP_INSTANTIATE_LAYERS(float)
SAIP_INSTANTIATE_LAYERS(double)

}  // namespace saip::layers
