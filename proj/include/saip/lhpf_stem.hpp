#pragma once

#include <string>

#include "saip/params.hpp"

namespace saip::lhpf {

/// Separable K x K Hamming window h(p) h(q), h(n) = 0.54 - 0.46 cos(2 pi n / (K - 1)).
template <typename T>
BasicTensor<T> hamming_window(int k);

/// softmax(W) over the K*K taps, multiplied by the Hamming window and
/// re-normalized to sum 1 per channel. W is (C, 1, K*K); returns (C, 1, K, K).
template <typename T>
Var<T> modulated_kernels(Var<T> w, int k);

/// X - depthwise_conv(X, modulated_kernels(W)) with replicate padding.
template <typename T>
Var<T> lhpf_layer(Var<T> x, Var<T> w, int k);

/// Lhpf layer owning its weight `<name>.weight` of shape (C, 1, K*K).
template <typename T>
Var<T> lhpf_layer(Context<T>& ctx, const std::string& name, Var<T> x, int k);

struct StemConfig {
  int kernel = 3;
  Index hidden_channels = 16;
  Index out_channels = 32;
};

/// Lhpf -> 1x1 -> 3x3/2 -> BN -> ReLU -> Lhpf -> 1x1 -> 3x3/2. Maps an
/// (N, 3, H, W) image to (N, out_channels, H/4, W/4).
template <typename T>
Var<T> stem_forward(Context<T>& ctx, const std::string& name, Var<T> image, const StemConfig& config);

}  // namespace saip::lhpf
