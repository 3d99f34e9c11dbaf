#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "saip/ops.hpp"
#include "saip/params.hpp"

namespace saip::encoder {

struct EncoderConfig {
  int patch_size = 4;
  Index channels = 24;
  std::array<int, 4> blocks{1, 1, 2, 1};
  std::array<int, 4> heads{1, 2, 4, 8};
  /// Key/value pooling stride relative to the query grid, per stage.
  std::array<int, 4> kv_strides{2, 1, 1, 1};
  int mlp_ratio = 4;
  Index image_height = 64;
  Index image_width = 64;

  /// 2^s C for stage s in [0, 4).
  Index stage_channels(int stage) const { return channels << stage; }
  /// Token grid of stage s: image / (4 * 2^s).
  ops::TokenGrid stage_grid(int stage) const;
  void validate() const;
};

struct BlockGeometry {
  Index in_channels = 0;
  Index out_channels = 0;
  int heads = 1;
  int q_stride = 1;
  /// Total key/value stride on the input grid.
  int kv_stride = 1;
  ops::TokenGrid in_grid;
  int mlp_ratio = 4;

  ops::TokenGrid q_grid() const { return {in_grid.height / q_stride, in_grid.width / q_stride}; }
  ops::TokenGrid kv_grid() const { return {in_grid.height / kv_stride, in_grid.width / kv_stride}; }
  int head_dim() const { return static_cast<int>(out_channels / heads); }
  /// A transition block changes resolution or width and has no input skip.
  bool transition() const { return q_stride != 1 || in_channels != out_channels; }
};

/// Non-overlapping p x p patches projected to `channels`; equivalent to a
/// stride-p convolution with a p x p kernel. Weight is (channels, 3 p p, 1, 1)
/// with input channel c p p + i p + j holding patch pixel (i, j) of channel c.
template <typename T>
Var<T> patch_embed(Context<T>& ctx, const std::string& name, Var<T> image, int patch_size, Index channels);

/// Multi-head attention on pooled NCHW maps q (N, D, Hq, Wq), k and v
/// (N, D, Hk, Wk): softmax((Q K^T + E_rel) / sqrt(d)) V + Q per head. The
/// relative-position bias is omitted when `tables` is empty.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::optional<std::pair<Var<T>, Var<T>>> tables, int heads);

/// Pre-norm pooling attention with query residual, output projection, and a
/// pre-norm GELU MLP with residual.
template <typename T>
Var<T> pooled_attention_block(Context<T>& ctx, const std::string& name, Var<T> x, const BlockGeometry& geometry);

/// Geometry of every block in stage order.
std::vector<std::vector<BlockGeometry>> block_layout(const EncoderConfig& config);

/// Feature pyramid X1..X4.
template <typename T>
std::vector<Var<T>> encoder_forward(Context<T>& ctx, const std::string& name, Var<T> image,
                                    const EncoderConfig& config);

/// Plain strided-convolution encoder with the same pyramid geometry.
template <typename T>
std::vector<Var<T>> conv_encoder_forward(Context<T>& ctx, const std::string& name, Var<T> image,
                                         const EncoderConfig& config);

}  // namespace saip::encoder
