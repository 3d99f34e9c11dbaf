#include "saip/datalab/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace saip::datalab {

void SceneConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("scene needs at least 2 classes");
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw std::invalid_argument("scene size " + std::to_string(height) + "x" + std::to_string(width) +
                                " must be divisible by 32");
  }
}

namespace {

enum class ShapeKind { rectangle, ellipse, ribbon };

ShapeKind kind_of(int cls) {
  constexpr std::array kinds{ShapeKind::rectangle, ShapeKind::ellipse, ShapeKind::ribbon};
  return kinds[static_cast<std::size_t>((cls - 1) % 3)];
}

struct Appearance {
  std::array<double, 3> color;
  double grain;   // per-pixel noise amplitude
  double stripe;  // amplitude of a directional stripe texture
};

Appearance appearance_of(int cls) {
  static const std::array<Appearance, 5> known{{
      {{115, 100, 78}, 14, 0},   // bare ground
      {{205, 200, 195}, 8, 18},  // roofs
      {{55, 135, 55}, 18, 0},    // vegetation
      {{62, 62, 72}, 6, 0},      // roads
      {{40, 75, 165}, 7, 6},     // water
  }};
  if (cls < static_cast<int>(known.size())) return known[static_cast<std::size_t>(cls)];
  const double hue = std::fmod(cls * 0.618033988749895, 1.0) * 2 * std::numbers::pi;
  return {{128 + 90 * std::cos(hue), 128 + 90 * std::cos(hue + 2.1), 128 + 90 * std::cos(hue + 4.2)}, 10, 8};
}

class Painter {
 public:
  Painter(LabelMap& mask, std::mt19937_64& rng) : mask_(mask), rng_(rng) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int count(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  void rectangle(int cls, double scale) {
    const double h = uniform(10, 22) * scale, w = uniform(10, 22) * scale;
    const double top = uniform(-h / 3, mask_.height - 2 * h / 3), left = uniform(-w / 3, mask_.width - 2 * w / 3);
    fill(cls, [&](double i, double j) { return i >= top && i < top + h && j >= left && j < left + w; });
  }

  void ellipse(int cls, double scale) {
    const double ry = uniform(6, 13) * scale, rx = uniform(6, 13) * scale;
    const double cy = uniform(0, mask_.height), cx = uniform(0, mask_.width);
    const double angle = uniform(0, std::numbers::pi);
    const double c = std::cos(angle), s = std::sin(angle);
    fill(cls, [&](double i, double j) {
      const double dy = i - cy, dx = j - cx;
      const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
      return u * u + v * v <= 1.0;
    });
  }

  void ribbon(int cls, double scale) {
    const double half = uniform(3.0, 4.5) * scale;
    const double angle = uniform(0, std::numbers::pi);
    const double cy = uniform(0.2, 0.8) * mask_.height, cx = uniform(0.2, 0.8) * mask_.width;
    const double ny = std::cos(angle), nx = -std::sin(angle);
    fill(cls, [&](double i, double j) { return std::abs((i - cy) * ny + (j - cx) * nx) <= half; });
  }

 private:
  template <typename Inside>
  void fill(int cls, Inside inside) {
    for (Index i = 0; i < mask_.height; ++i)
      for (Index j = 0; j < mask_.width; ++j)
        if (inside(static_cast<double>(i) + 0.5, static_cast<double>(j) + 0.5)) mask_.at(i, j) = cls;
  }

  LabelMap& mask_;
  std::mt19937_64& rng_;
};

}  // namespace

SegSample generate_scene(std::uint64_t seed, const SceneConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  SegSample sample{Tensor(Shape{3, config.height, config.width}), LabelMap(config.height, config.width, 0)};
  Painter painter(sample.mask, rng);
  const double scale = std::sqrt(static_cast<double>(config.height * config.width) / (64.0 * 64.0));

  // Paint order: ribbons, then ellipses, then rectangles.
  std::vector<int> order;
  for (int c = 1; c < config.classes; ++c)
    if (kind_of(c) == ShapeKind::ribbon) order.push_back(c);
  for (int c = 1; c < config.classes; ++c)
    if (kind_of(c) == ShapeKind::ellipse) order.push_back(c);
  for (int c = 1; c < config.classes; ++c)
    if (kind_of(c) == ShapeKind::rectangle) order.push_back(c);
  const double crowding = 3.0 / std::max(3, config.classes - 1);
  for (int c : order) {
    switch (kind_of(c)) {
      case ShapeKind::ribbon:
        for (int k = painter.count(1, 2); k > 0; --k) painter.ribbon(c, scale);
        break;
      case ShapeKind::ellipse:
        for (int k = painter.count(2, 3); k > 0; --k) painter.ellipse(c, scale * std::sqrt(crowding));
        break;
      case ShapeKind::rectangle:
        for (int k = painter.count(2, 4); k > 0; --k) painter.rectangle(c, scale * std::sqrt(crowding));
        break;
    }
  }

  std::normal_distribution<double> grain(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double illumination = 1.0 + 0.08 * unit(rng);
  std::vector<std::array<double, 3>> tint(static_cast<std::size_t>(config.classes));
  std::vector<double> stripe_angle(static_cast<std::size_t>(config.classes));
  for (int c = 0; c < config.classes; ++c) {
    for (auto& t : tint[static_cast<std::size_t>(c)]) t = 12.0 * unit(rng);
    stripe_angle[static_cast<std::size_t>(c)] = std::numbers::pi * unit(rng);
  }
  const Index plane = config.height * config.width;
  for (Index i = 0; i < config.height; ++i)
    for (Index j = 0; j < config.width; ++j) {
      const int c = sample.mask.at(i, j);
      const auto look = appearance_of(c);
      const double a = stripe_angle[static_cast<std::size_t>(c)];
      const double stripe = look.stripe * std::cos(2.2 * (std::cos(a) * static_cast<double>(i) + std::sin(a) * static_cast<double>(j)));
      const double shade = 6.0 * std::sin(0.21 * static_cast<double>(i) + 0.5) * std::cos(0.17 * static_cast<double>(j));
      const double g = look.grain * grain(rng);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = illumination * (look.color[static_cast<std::size_t>(ch)] + tint[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)]) +
                         stripe + shade + g;
        sample.image[ch * plane + i * config.width + j] = static_cast<float>(std::clamp(v, 0.0, 255.0));
      }
    }
  return sample;
}

Batch stack(std::span<const SegSample> samples) {
  if (samples.empty()) throw std::invalid_argument("cannot stack an empty batch");
  const auto& s0 = samples.front().image.shape();
  Batch b{Tensor(Shape{static_cast<Index>(samples.size()), s0[0], s0[1], s0[2]}), {}};
  const Index per = samples.front().image.numel();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (samples[k].image.shape() != s0) throw ShapeError("samples in a batch must share one shape");
    std::copy(samples[k].image.data().begin(), samples[k].image.data().end(),
              b.images.data().begin() + static_cast<std::ptrdiff_t>(k) * per);
    b.labels.push_back(samples[k].mask);
  }
  return b;
}

Batch make_batch(std::span<const std::uint64_t> seeds, const SceneConfig& config) {
  std::vector<SegSample> samples;
  for (auto s : seeds) samples.push_back(generate_scene(s, config));
  return stack(samples);
}

}  // namespace saip::datalab
