#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saip/tensor.hpp"

namespace saip::datalab {

enum class NoiseKind { gaussian, salt_pepper, speckle };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double apply_prob = 1.0;
  /// Gaussian sigma on the 0-255 scale, salt-and-pepper pixel ratio, or
  /// multiplicative speckle sigma.
  double magnitude = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

const char* to_string(NoiseKind kind);

/// Corrupts one (C, H, W) image in [0, 255] with probability apply_prob.
/// Salt-and-pepper flips whole pixels (all channels) to 0 or 255. The result
/// is clamped to [0, 255].
Tensor add_noise(const Tensor& image, const NoiseSpec& spec);

/// Applies add_noise to each image of an (N, C, H, W) batch with the
/// per-image seed spec.seed + index.
Tensor add_noise_batch(const Tensor& images, const NoiseSpec& spec);

struct NamedNoise {
  std::string name;
  NoiseSpec spec;
};

/// `table5` expands to the three corruptions; `table5-gaussian`,
/// `table5-salt-pepper`, `table5-speckle` select one. Throws
/// std::invalid_argument on unknown names.
std::vector<NamedNoise> noise_preset(const std::string& name);
const std::vector<std::string>& noise_preset_names();

}  // namespace saip::datalab
