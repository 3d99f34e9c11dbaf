#include "saip/datalab/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace saip::datalab {

void write_image(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("images must have 1 or 3 channels");
  if (image.pixels.size() != static_cast<std::size_t>(image.width * image.height * image.channels)) {
    throw std::invalid_argument("pixel buffer does not match image size");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError(ImageErrorCode::io, "cannot open " + path.string() + " for writing");
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw ImageError(ImageErrorCode::io, "write to " + path.string() + " failed");
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

  long number(const char* what) {
    skip_space();
    std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_ || pos_ - start > 9) {
      throw ImageError(ImageErrorCode::malformed_header, std::string("missing or invalid ") + what);
    }
    return std::stol(bytes_.substr(start, pos_ - start));
  }

  std::size_t body_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw ImageError(ImageErrorCode::malformed_header, "header must end with one whitespace byte");
    }
    return pos_ + 1;
  }

  std::size_t pos_ = 2;

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
};

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError(ImageErrorCode::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ImageError(ImageErrorCode::malformed_header, "not a binary PGM/PPM file");
  }
  HeaderReader header(bytes);
  Image8 img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  img.width = header.number("width");
  img.height = header.number("height");
  const long maxval = header.number("max value");
  if (img.width <= 0 || img.height <= 0) throw ImageError(ImageErrorCode::malformed_header, "non-positive image size");
  if (maxval != 255) throw ImageError(ImageErrorCode::malformed_header, "max value must be 255");
  const std::size_t start = header.body_start();
  const auto need = static_cast<std::size_t>(img.width * img.height * img.channels);
  if (bytes.size() < start + need) {
    throw ImageError(ImageErrorCode::short_body, "expected " + std::to_string(need) + " pixel bytes, found " +
                                                     std::to_string(bytes.size() - std::min(bytes.size(), start)));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
  return img;
}

Image8 to_image(const Tensor& chw) {
  if (chw.rank() != 3 || (chw.dim(0) != 3 && chw.dim(0) != 1)) {
    throw ShapeError("expected a (3, H, W) or (1, H, W) tensor, got " + shape_to_string(chw.shape()));
  }
  Image8 img{chw.dim(2), chw.dim(1), static_cast<int>(chw.dim(0)), {}};
  const Index plane = img.width * img.height;
  img.pixels.resize(static_cast<std::size_t>(plane * img.channels));
  for (Index p = 0; p < plane; ++p)
    for (int c = 0; c < img.channels; ++c) {
      const float v = std::clamp(std::round(chw[c * plane + p]), 0.0f, 255.0f);
      img.pixels[static_cast<std::size_t>(p * img.channels + c)] = static_cast<std::uint8_t>(v);
    }
  return img;
}

Tensor to_tensor(const Image8& image) {
  const Index plane = image.width * image.height;
  Tensor t(Shape{image.channels, image.height, image.width});
  for (Index p = 0; p < plane; ++p)
    for (int c = 0; c < image.channels; ++c) t[c * plane + p] = image.pixels[static_cast<std::size_t>(p * image.channels + c)];
  return t;
}

Image8 mask_to_image(const LabelMap& mask) {
  Image8 img{mask.width, mask.height, 1, {}};
  for (auto v : mask.values) {
    if (v < 0 || v > 255) throw std::out_of_range("class " + std::to_string(v) + " does not fit a gray level");
    img.pixels.push_back(static_cast<std::uint8_t>(v));
  }
  return img;
}

LabelMap image_to_mask(const Image8& image) {
  if (image.channels != 1) throw std::invalid_argument("masks are single-channel images");
  LabelMap m(image.height, image.width);
  std::copy(image.pixels.begin(), image.pixels.end(), m.values.begin());
  return m;
}

Image8 normalize_plane(const float* values, Index height, Index width) {
  const Index n = height * width;
  const auto [lo, hi] = std::minmax_element(values, values + n);
  const float range = *hi - *lo;
  Image8 img{width, height, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(n))};
  for (Index i = 0; i < n; ++i) {
    const float v = range > 0 ? (values[i] - *lo) / range * 255.0f : 0.0f;
    img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v));
  }
  return img;
}

}  // namespace saip::datalab
