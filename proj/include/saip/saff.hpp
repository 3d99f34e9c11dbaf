#pragma once

#include <string>

#include "saip/params.hpp"

/// Spectral adaptive feature fusion. Kernel fields are (N, G, K*K, H, W) with
/// taps in row-major order; offset fields are (N, 2, H, W) holding (row, col)
/// displacements in pixels.
namespace saip::saff {

struct SaffConfig {
  int kernel = 3;
  /// Sub-pixel groups of the 2x upsampling path.
  int groups = 4;
};

/// softmax over taps of logits (N, G*K*K, H, W).
template <typename T>
Var<T> lowpass_from_logits(Var<T> logits, int groups, int k);

/// E - softmax over taps of logits (N, K*K, H, W); one group.
template <typename T>
Var<T> highpass_from_logits(Var<T> logits, int k);

/// 3x3 convolution of the guide (with the given stride) into G*K*K logits,
/// normalized into a low-pass field.
template <typename T>
Var<T> predict_lowpass_kernels(Context<T>& ctx, const std::string& name, Var<T> guide, int groups, int k, int stride);

/// 3x3 convolution of the guide into K*K logits, turned into a high-pass field.
template <typename T>
Var<T> predict_highpass_kernels(Context<T>& ctx, const std::string& name, Var<T> guide, int k);

/// Low-pass filtering of y guided by `guide`. When the guide is at twice the
/// resolution of y, kernels for G sub-pixel groups are predicted at y's
/// resolution and the groups are pixel-shuffled to the guide resolution; at
/// equal resolution a single group filters in place.
template <typename T>
Var<T> lp_filter_upsample(Context<T>& ctx, const std::string& name, Var<T> guide, Var<T> y, const SaffConfig& config);

/// High-pass response of x with kernels predicted from `guide` (same resolution).
template <typename T>
Var<T> hp_filter(Context<T>& ctx, const std::string& name, Var<T> guide, Var<T> x, const SaffConfig& config);

/// D = conv([Z, S]), A = sigmoid(conv([Z, S])) with one channel, O = D * A.
template <typename T>
Var<T> offset_generator(Context<T>& ctx, const std::string& name, Var<T> z);

/// Bilinear resampling of y at (i + u, j + v).
template <typename T>
Var<T> resample(Var<T> y, Var<T> offsets);

/// Two-stage fusion of a level-l map x with the level-(l+1) map y (half the
/// resolution) or, for the head, a map at equal resolution. The result has
/// x's shape.
template <typename T>
Var<T> saff_fuse(Context<T>& ctx, const std::string& name, Var<T> x, Var<T> y, const SaffConfig& config);

}  // namespace saip::saff
