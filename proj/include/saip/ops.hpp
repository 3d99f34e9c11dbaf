#pragma once

#include <optional>
#include <type_traits>
#include <vector>

#include "saip/autograd.hpp"

/// Differentiable tensor operations. Every op reads its operands from their
/// tape and records its result (and backward rule) on the same tape.
namespace saip::ops {

enum class Padding { zero, replicate };

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  Padding padding = Padding::zero;

  /// "Same" padding for stride 1: d(k-1)/2.
  int pad() const { return dilation * (kernel - 1) / 2; }
  /// Spatial support of one output tap, d(k-1)+1.
  int support() const { return dilation * (kernel - 1) + 1; }
};

/// floor((in + 2*pad - d(k-1) - 1) / stride) + 1
Index conv_output_size(Index in, const ConvSpec& spec);

// Elementwise arithmetic with right-aligned broadcasting.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> add_scalar(Var<T> x, T value);

template <typename T> Var<T> exp(Var<T> x);
template <typename T> Var<T> log(Var<T> x);
template <typename T> Var<T> sqrt(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> relu(Var<T> x);
/// Exact (erf) GELU.
template <typename T> Var<T> gelu(Var<T> x);

/// Sum of all elements, shape {1}.
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
/// Sum along one axis, keeping it with extent 1.
template <typename T> Var<T> sum_axis(Var<T> x, int axis);

template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> permute(Var<T> x, const std::vector<int>& order);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int axis);
template <typename T> Var<T> slice(Var<T> x, int axis, Index start, Index length);

/// Batched product of rank-3 operands: (B,M,K) x (B,K,N) -> (B,M,N), with
/// optional transposition of the trailing two axes of either operand.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a = false, bool transpose_b = false);

template <typename T> Var<T> softmax(Var<T> x, int axis);
template <typename T> Var<T> log_softmax(Var<T> x, int axis);

/// NCHW convolution. weight is (O, C/groups, k, k); bias is (O).
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, std::type_identity_t<std::optional<Var<T>>> bias, const ConvSpec& spec);

/// Normalizes over `axis` to zero mean / unit variance, then applies the
/// per-entry affine gamma, beta (both shaped {extent(axis)}).
template <typename T>
Var<T> layer_norm(Var<T> x, int axis, Var<T> gamma, Var<T> beta, T eps);

/// Per-channel normalization of an NCHW tensor. In training mode uses batch
/// statistics and folds them into the running estimates; in eval mode uses the
/// running estimates.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BasicTensor<T>& running_mean, BasicTensor<T>& running_var,
                  bool training, T momentum, T eps);

/// (N, C*r*r, H, W) -> (N, C, r*H, r*W); input channel c*r*r + i*r + j lands at
/// sub-pixel (i, j).
template <typename T> Var<T> pixel_shuffle(Var<T> x, int r);
template <typename T> Var<T> pixel_unshuffle(Var<T> x, int r);

/// Samples x (N,C,H,W) at absolute fractional positions coords (N,2,Ho,Wo)
/// holding (row, col). Coordinates clamp to the image; the clamped region
/// has zero coordinate gradient. A non-finite coordinate yields NaN at that
/// position and contributes no gradient.
template <typename T> Var<T> bilinear_sample(Var<T> x, Var<T> coords);

/// Half-pixel-centred bilinear resize with edge clamping.
template <typename T> Var<T> resize_bilinear(Var<T> x, Index out_h, Index out_w);

/// Per-pixel filtering of x (N,C,H,W) with kernels (N,G,K*K,H,W), replicate
/// padding. Output (N, C*G, H, W) with group g of channel c at c*G + g.
template <typename T> Var<T> spatially_variant_conv(Var<T> x, Var<T> kernels);
/// Sum over taps of k_t * (x[p + t] - x[p]). Equals spatially_variant_conv for
/// zero-sum kernels and maps constant inputs to exactly zero.
template <typename T> Var<T> spatially_variant_conv_centered(Var<T> x, Var<T> kernels);
/// x - depthwise_conv(x, kernels) with replicate padding, evaluated as
/// sum_t k_t * (x[p] - x[p + t]) so that constant inputs give exactly zero when
/// each (C, 1, K, K) kernel sums to one.
template <typename T> Var<T> depthwise_highpass(Var<T> x, Var<T> kernels);

/// Cosine similarity between each pixel of z (N,C,H,W) and its 8 neighbours
/// (row-major order, centre skipped), replicate padding. eps enters both norms
/// as sqrt(|v|^2 + eps).
template <typename T> Var<T> local_similarity(Var<T> z, T eps = T(1e-8));

struct TokenGrid {
  Index height = 1;
  Index width = 1;
  Index size() const { return height * width; }
};

/// Number of relative displacements along one axis between grids of extents
/// q and k: 2*max(q, k) - 1.
Index relpos_table_size(Index q, Index k);

/// Decomposed relative-position attention bias:
/// E[b,i,j] = q[b,i,:] . (Rh[dh(i,j),:] + Rw[dw(i,j),:]) where the displacement
/// index accounts for integer stride ratios between the query and key grids.
/// q is (B, Lq, d), rh is (Th, d), rw is (Tw, d); returns (B, Lq, Lk).
template <typename T>
Var<T> relpos_bias(Var<T> q, Var<T> rh, Var<T> rw, TokenGrid q_grid, TokenGrid k_grid);

}  // namespace saip::ops
