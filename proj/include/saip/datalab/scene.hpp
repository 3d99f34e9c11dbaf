#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "saip/label_map.hpp"

namespace saip::datalab {

struct SceneConfig {
  Index height = 64;
  Index width = 64;
  int classes = 4;

  void validate() const;
};

/// Image (3, H, W) with values in [0, 255] and its class map.
struct SegSample {
  Tensor image;
  LabelMap mask;
};

/// Textured background (class 0) overlaid with per-class shapes: rectangles,
/// ellipses, and straight road ribbons at least 6 px wide, cycling through
/// the shape kinds for classes 1, 2, 3, ... Deterministic per seed.
SegSample generate_scene(std::uint64_t seed, const SceneConfig& config);

struct Batch {
  Tensor images;  // (N, 3, H, W)
  std::vector<LabelMap> labels;
};

/// Stacks samples generated from the given seeds.
Batch make_batch(std::span<const std::uint64_t> seeds, const SceneConfig& config);
/// Stacks existing samples.
Batch stack(std::span<const SegSample> samples);

}  // namespace saip::datalab
