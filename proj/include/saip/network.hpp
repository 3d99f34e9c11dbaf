#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "saip/cdc.hpp"
#include "saip/encoder.hpp"
#include "saip/label_map.hpp"
#include "saip/lhpf_stem.hpp"
#include "saip/params.hpp"
#include "saip/saff.hpp"

namespace saip::network {

/// Components replaced by their plain counterparts.
struct Ablation {
  bool saff = false;
  bool cdc = false;
  bool stem = false;
  bool encoder = false;

  bool any() const { return saff || cdc || stem || encoder; }
  /// Comma-separated list in the fixed order saff,cdc,stem,encoder; empty when none.
  std::string to_string() const;
  /// Parses a comma-separated list of component names; throws on unknown names.
  static Ablation parse(const std::string& text);
  bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
  encoder::EncoderConfig encoder;
  saff::SaffConfig saff;
  cdc::CdcConfig cdc;
  lhpf::StemConfig stem;
  int classes = 4;
  double lambda = 0.5;
  Ablation ablation;

  void validate() const;
};

template <typename T>
struct ModelState {
  ParamSet<T> params;
  ParamSet<T> buffers;
};

/// Parameters and buffers drawn deterministically from `seed`.
template <typename T>
ModelState<T> initialize_model(const ModelConfig& config, std::uint64_t seed);

/// Logits (N, classes, H, W) for images (N, 3, H, W) with values in [0, 255].
template <typename T>
Var<T> model_forward(Context<T>& ctx, Var<T> images, const ModelConfig& config);

/// lambda * CE + (1 - lambda) * (1 - 2 sum(y p) / (sum(y) + sum(p))), with p the
/// per-pixel softmax of the logits and sums over all pixels and classes.
template <typename T>
Var<T> hybrid_loss(Var<T> logits, const std::vector<LabelMap>& labels, double lambda);

/// Eval-mode logits without gradient recording.
Tensor predict(const ModelConfig& config, const ModelState<float>& state, const Tensor& images);
/// Per-pixel argmax over the class axis.
std::vector<LabelMap> argmax_labels(const Tensor& logits);

struct Schedule {
  double base_lr = 6e-5;
  Index warmup_steps = 100;
  Index total_steps = 2000;
  double power = 1.0;
};

/// Linear warmup from 0 to base_lr, then polynomial decay to 0 at total_steps.
double lr_schedule(Index step, const Schedule& schedule);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainState {
  ModelState<float> model;
  ParamSet<float> adam_m;
  ParamSet<float> adam_v;
  Index step = 0;
};

/// In-place Adam update of one tensor at 0-based step `step` with learning rate `lr`.
void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v, double lr,
                 Index step, const AdamConfig& adam);

TrainState make_train_state(const ModelConfig& config, std::uint64_t seed);

class NonFiniteLoss : public std::runtime_error {
 public:
  explicit NonFiniteLoss(Index step);
  Index step() const { return step_; }

 private:
  Index step_;
};

struct StepResult {
  double loss = 0;
  double lr = 0;
};

/// One Adam update at lr_schedule(state.step); increments the step.
StepResult train_step(const ModelConfig& config, TrainState& state, const Tensor& images,
                      const std::vector<LabelMap>& labels, const Schedule& schedule, const AdamConfig& adam = {});

}  // namespace saip::network
