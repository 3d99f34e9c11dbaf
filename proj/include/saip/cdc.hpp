#pragma once

#include <string>
#include <vector>

#include "saip/params.hpp"

namespace saip::cdc {

struct CdcConfig {
  std::vector<int> dilations{1, 2, 3};
  int kernel = 3;

  int branches() const { return static_cast<int>(dilations.size()); }
  /// d_i (k - 1) + 1 for each branch.
  std::vector<int> receptive_fields() const;
  /// Throws when the branch layout is invalid for `channels`.
  void validate(Index channels) const;
};

/// Channel mixer and equal channel split into one chunk per branch.
template <typename T>
std::vector<Var<T>> split_branches(Context<T>& ctx, const std::string& name, Var<T> y, const CdcConfig& config);

/// Dilated branch convolutions, concatenated along channels.
template <typename T>
Var<T> branch_convs(Context<T>& ctx, const std::string& name, const std::vector<Var<T>>& parts, const CdcConfig& config);

/// 1x1 -> BN -> ReLU -> 3x3 -> BN -> ReLU.
template <typename T>
Var<T> merge(Context<T>& ctx, const std::string& name, Var<T> x, Index out_channels);

/// Full layer; output keeps the input channel count and resolution.
template <typename T>
Var<T> cdc_forward(Context<T>& ctx, const std::string& name, Var<T> y, const CdcConfig& config);

}  // namespace saip::cdc
