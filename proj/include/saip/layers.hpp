#pragma once

#include <string>

#include "saip/ops.hpp"
#include "saip/params.hpp"

/// Parameterized building blocks shared by the network modules. Each layer owns
/// the parameters under its name: `<name>.weight`, `<name>.bias`, ...
namespace saip::layers {

struct ConvLayer {
  Index in_channels = 0;
  Index out_channels = 0;
  ops::ConvSpec spec;
  bool bias = true;
  /// Overrides the default He initialization of the weight.
  std::optional<Init> weight_init;
};

template <typename T>
Var<T> conv(Context<T>& ctx, const std::string& name, Var<T> x, const ConvLayer& layer);

/// 1x1 convolution with bias.
template <typename T>
Var<T> pointwise(Context<T>& ctx, const std::string& name, Var<T> x, Index out_channels);

/// Batch normalization over NCHW channels with running-statistics buffers.
template <typename T>
Var<T> batch_norm(Context<T>& ctx, const std::string& name, Var<T> x);

/// Layer normalization over the channel axis of an NCHW map.
template <typename T>
Var<T> channel_norm(Context<T>& ctx, const std::string& name, Var<T> x);

}  // namespace saip::layers
