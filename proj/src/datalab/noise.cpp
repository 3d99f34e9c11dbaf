#include "saip/datalab/noise.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace saip::datalab {

void NoiseSpec::validate() const {
  if (!(apply_prob >= 0.0 && apply_prob <= 1.0)) throw std::invalid_argument("noise apply_prob must lie in [0, 1]");
  if (!(magnitude >= 0.0)) throw std::invalid_argument("noise magnitude must be non-negative");
  if (kind == NoiseKind::salt_pepper && magnitude > 1.0) throw std::invalid_argument("salt-and-pepper ratio exceeds 1");
}

const char* to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::salt_pepper: return "salt_pepper";
    case NoiseKind::speckle: return "speckle";
  }
  return "unknown";
}

Tensor add_noise(const Tensor& image, const NoiseSpec& spec) {
  spec.validate();
  if (image.rank() != 3) throw ShapeError("add_noise expects (C, H, W), got " + shape_to_string(image.shape()));
  std::mt19937_64 rng(spec.seed ^ 0xD1B54A32D192ED03ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor out = image;
  if (unit(rng) >= spec.apply_prob) return out;

  const Index channels = image.dim(0), plane = image.dim(1) * image.dim(2);
  auto px = out.data();
  switch (spec.kind) {
    case NoiseKind::gaussian: {
      std::normal_distribution<double> nd(0.0, spec.magnitude);
      for (auto& v : px) v = static_cast<float>(v + nd(rng));
      break;
    }
    case NoiseKind::speckle: {
      std::normal_distribution<double> nd(0.0, spec.magnitude);
      for (auto& v : px) v = static_cast<float>(v * (1.0 + nd(rng)));
      break;
    }
    case NoiseKind::salt_pepper: {
      std::bernoulli_distribution flip(spec.magnitude);
      std::bernoulli_distribution salt(0.5);
      for (Index p = 0; p < plane; ++p) {
        if (!flip(rng)) continue;
        const float value = salt(rng) ? 255.0f : 0.0f;
        for (Index c = 0; c < channels; ++c) px[static_cast<std::size_t>(c * plane + p)] = value;
      }
      break;
    }
  }
  for (auto& v : px) v = std::clamp(v, 0.0f, 255.0f);
  return out;
}

Tensor add_noise_batch(const Tensor& images, const NoiseSpec& spec) {
  if (images.rank() != 4) throw ShapeError("add_noise_batch expects (N, C, H, W), got " + shape_to_string(images.shape()));
  Tensor out = images;
  const Shape one{images.dim(1), images.dim(2), images.dim(3)};
  const Index per = shape_numel(one);
  for (Index n = 0; n < images.dim(0); ++n) {
    std::vector<float> slice(images.data().begin() + n * per, images.data().begin() + (n + 1) * per);
    NoiseSpec s = spec;
    s.seed = spec.seed + static_cast<std::uint64_t>(n);
    const Tensor noisy = add_noise(Tensor(one, std::move(slice)), s);
    std::copy(noisy.data().begin(), noisy.data().end(), out.data().begin() + n * per);
  }
  return out;
}

std::vector<NamedNoise> noise_preset(const std::string& name) {
  const NamedNoise gaussian{"gaussian", {NoiseKind::gaussian, 0.5, 10.0, 0}};
  const NamedNoise salt_pepper{"salt-pepper", {NoiseKind::salt_pepper, 0.5, 0.01, 0}};
  const NamedNoise speckle{"speckle", {NoiseKind::speckle, 0.5, 0.1, 0}};
  if (name == "table5") return {gaussian, salt_pepper, speckle};
  if (name == "table5-gaussian") return {gaussian};
  if (name == "table5-salt-pepper") return {salt_pepper};
  if (name == "table5-speckle") return {speckle};
  std::string known;
  for (const auto& n : noise_preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown noise preset '" + name + "' (available: " + known + ")");
}

const std::vector<std::string>& noise_preset_names() {
  static const std::vector<std::string> names{"table5", "table5-gaussian", "table5-salt-pepper", "table5-speckle"};
  return names;
}

}  // namespace saip::datalab
