#pragma once

#include <cstdint>
#include <vector>

#include "saip/tensor.hpp"

namespace saip {

/// Dense (H, W) map of integer class indices, row-major.
struct LabelMap {
  Index height = 0;
  Index width = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(Index h, Index w, std::int32_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h * w), fill) {}

  std::int32_t& at(Index i, Index j) { return values[static_cast<std::size_t>(i * width + j)]; }
  std::int32_t at(Index i, Index j) const { return values[static_cast<std::size_t>(i * width + j)]; }
  Index size() const { return height * width; }
  bool operator==(const LabelMap&) const = default;
};

}  // namespace saip
