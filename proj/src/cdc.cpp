#include "saip/cdc.hpp"

#include "saip/layers.hpp"

namespace saip::cdc {

std::vector<int> CdcConfig::receptive_fields() const {
  std::vector<int> r;
  for (int d : dilations) r.push_back(d * (kernel - 1) + 1);
  return r;
}

void CdcConfig::validate(Index channels) const {
  if (dilations.empty()) throw std::invalid_argument("CDC needs at least one branch");
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("CDC kernel must be odd");
  const auto r = receptive_fields();
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    if (dilations[i] < 1) throw std::invalid_argument("CDC dilations must be positive");
    if (i > 0 && r[i] <= r[i - 1]) throw std::invalid_argument("CDC receptive fields must strictly increase");
  }
  if (channels % branches() != 0) {
    throw ShapeError("CDC channels C=" + std::to_string(channels) + " not divisible by branch count D=" +
                     std::to_string(branches()));
  }
}

template <typename T>
std::vector<Var<T>> split_branches(Context<T>& ctx, const std::string& name, Var<T> y, const CdcConfig& config) {
  const Index c = y.dim(1);
  config.validate(c);
  auto mixed = layers::pointwise(ctx, join_name(name, "mix"), y, c);
  const Index chunk = c / config.branches();
  std::vector<Var<T>> parts;
  for (int i = 0; i < config.branches(); ++i) parts.push_back(ops::slice(mixed, 1, i * chunk, chunk));
  return parts;
}

template <typename T>
Var<T> branch_convs(Context<T>& ctx, const std::string& name, const std::vector<Var<T>>& parts,
                    const CdcConfig& config) {
  std::vector<Var<T>> outs;
  for (int i = 0; i < config.branches(); ++i) {
    layers::ConvLayer layer;
    layer.in_channels = parts[static_cast<std::size_t>(i)].dim(1);
    layer.out_channels = layer.in_channels;
    layer.spec.kernel = config.kernel;
    layer.spec.dilation = config.dilations[static_cast<std::size_t>(i)];
    outs.push_back(layers::conv(ctx, join_name(name, "branch" + std::to_string(i)), parts[static_cast<std::size_t>(i)], layer));
  }
  return outs.size() == 1 ? outs.front() : ops::concat(outs, 1);
}

template <typename T>
Var<T> merge(Context<T>& ctx, const std::string& name, Var<T> x, Index out_channels) {
  layers::ConvLayer reduce;
  reduce.in_channels = x.dim(1);
  reduce.out_channels = out_channels;
  reduce.spec.kernel = 1;
  reduce.bias = false;
  auto h = ops::relu(layers::batch_norm(ctx, join_name(name, "bn1"), layers::conv(ctx, join_name(name, "conv1"), x, reduce)));
  layers::ConvLayer spatial;
  spatial.in_channels = out_channels;
  spatial.out_channels = out_channels;
  spatial.bias = false;
  return ops::relu(layers::batch_norm(ctx, join_name(name, "bn2"), layers::conv(ctx, join_name(name, "conv2"), h, spatial)));
}

template <typename T>
Var<T> cdc_forward(Context<T>& ctx, const std::string& name, Var<T> y, const CdcConfig& config) {
  auto parts = split_branches(ctx, name, y, config);
  return merge(ctx, join_name(name, "merge"), branch_convs(ctx, name, parts, config), y.dim(1));
}

#define SAIP_INSTANTIATE_CDC(T)                                                                                   \
  template std::vector<Var<T>> split_branches<T>(Context<T>&, const std::string&, Var<T>, const CdcConfig&);     \
  template Var<T> branch_convs<T>(Context<T>&, const std::string&, const std::vector<Var<T>>&, const CdcConfig&); \
  template Var<T> merge<T>(Context<T>&, const std::string&, Var<T>, Index);                                      \
  template Var<T> cdc_forward<T>(Context<T>&, const std::string&, Var<T>, const CdcConfig&);

SAIP_INSTANTIATE_CDC(float)
SAIP_INSTANTIATE_CDC(double)

}  // namespace saip::cdc
