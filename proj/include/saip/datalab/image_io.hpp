#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "saip/label_map.hpp"

namespace saip::datalab {

/// 8-bit raster, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  Index width = 0;
  Index height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Image8&) const = default;
};

enum class ImageErrorCode { io, malformed_header, short_body };

class ImageError : public std::runtime_error {
 public:
  ImageError(ImageErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
  ImageErrorCode code() const { return code_; }

 private:
  ImageErrorCode code_;
};

/// Binary PPM (P6) for 3 channels, PGM (P5) for 1 channel, max value 255.
void write_image(const std::filesystem::path& path, const Image8& image);
Image8 read_image(const std::filesystem::path& path);

/// (3, H, W) tensor in [0, 255] <-> RGB raster; values are rounded and clamped.
Image8 to_image(const Tensor& chw);
Tensor to_tensor(const Image8& image);

/// Class indices stored as gray levels.
Image8 mask_to_image(const LabelMap& mask);
LabelMap image_to_mask(const Image8& image);

/// Linearly maps an (H, W) plane to 0..255 over its min..max range.
Image8 normalize_plane(const float* values, Index height, Index width);

}  // namespace saip::datalab
