#include "saip/network.hpp"

#include <cmath>
#include <sstream>

#include "saip/layers.hpp"

namespace saip::network {

std::string Ablation::to_string() const {
  std::vector<std::string> parts;
  if (saff) parts.emplace_back("saff");
  if (cdc) parts.emplace_back("cdc");
  if (stem) parts.emplace_back("stem");
  if (encoder) parts.emplace_back("encoder");
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
  return out;
}

Ablation Ablation::parse(const std::string& text) {
  Ablation a;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "saff") a.saff = true;
    else if (item == "cdc") a.cdc = true;
    else if (item == "stem") a.stem = true;
    else if (item == "encoder") a.encoder = true;
    else if (!item.empty()) throw std::invalid_argument("unknown ablation '" + item + "' (expected saff, cdc, stem, encoder)");
  }
  return a;
}

void ModelConfig::validate() const {
  encoder.validate();
  if (classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (!ablation.cdc) {
    for (int s = 0; s < 3; ++s) cdc.validate(encoder.stage_channels(s));
  }
}

namespace {

template <typename T>
Var<T> plain_fuse(Context<T>& ctx, const std::string& name, Var<T> x, Var<T> y) {
  auto yc = layers::pointwise(ctx, join_name(name, "proj"), y, x.dim(1));
  if (yc.dim(2) != x.dim(2) || yc.dim(3) != x.dim(3)) {
    layers::ConvLayer up;
    up.in_channels = x.dim(1);
    up.out_channels = x.dim(1);
    yc = layers::conv(ctx, join_name(name, "up"), ops::resize_bilinear(yc, x.dim(2), x.dim(3)), up);
  }
  return ops::add(x, yc);
}

template <typename T>
Var<T> fuse(Context<T>& ctx, const std::string& name, Var<T> x, Var<T> y, const ModelConfig& config) {
  return config.ablation.saff ? plain_fuse(ctx, join_name(name, "fuse"), x, y)
                              : saff::saff_fuse(ctx, join_name(name, "saff"), x, y, config.saff);
}

}  // namespace

template <typename T>
Var<T> model_forward(Context<T>& ctx, Var<T> images, const ModelConfig& config) {
  const Index h = images.dim(2), w = images.dim(3);
  auto x = ops::add_scalar(ops::scale(images, T(1.0 / 63.75)), T(-2));
  auto pyramid = config.ablation.encoder ? encoder::conv_encoder_forward(ctx, "encoder", x, config.encoder)
                                         : encoder::encoder_forward(ctx, "encoder", x, config.encoder);
  auto y = pyramid[3];
  for (int level = 2; level >= 0; --level) {
    const std::string name = "decoder" + std::to_string(level + 1);
    y = fuse(ctx, name, pyramid[static_cast<std::size_t>(level)], y, config);
    if (!config.ablation.cdc) y = cdc::cdc_forward(ctx, join_name(name, "cdc"), y, config.cdc);
  }
  if (!config.ablation.stem) {
    auto hp = lhpf::stem_forward(ctx, "stem", x, config.stem);
    y = fuse(ctx, "head", hp, y, config);
  }
  ctx.record("head", y);
  auto logits = layers::pointwise(ctx, "classifier", y, config.classes);
  return ops::resize_bilinear(logits, h, w);
}

template <typename T>
ModelState<T> initialize_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState<T> state;
  std::mt19937_64 rng(seed);
  Tape<T> tape;
  Context<T> ctx(tape, state.params, state.buffers, false);
  ctx.enable_building(rng);
  ctx.freeze_parameters(true);
  auto images = tape.constant(BasicTensor<T>(Shape{1, 3, config.encoder.image_height, config.encoder.image_width}));
  model_forward(ctx, images, config);
  return state;
}

template <typename T>
Var<T> hybrid_loss(Var<T> logits, const std::vector<LabelMap>& labels, double lambda) {
  const auto& s = logits.shape();
  if (s.size() != 4 || static_cast<std::size_t>(s[0]) != labels.size()) {
    throw ShapeError("logits " + shape_to_string(s) + " do not match a batch of " + std::to_string(labels.size()) +
                     " label maps");
  }
  const Index n = s[0], classes = s[1], h = s[2], w = s[3], plane = h * w;
  BasicTensor<T> onehot(s);
  for (Index b = 0; b < n; ++b) {
    const auto& lm = labels[static_cast<std::size_t>(b)];
    if (lm.height != h || lm.width != w) throw ShapeError("label map " + std::to_string(b) + " has the wrong size");
    for (Index p = 0; p < plane; ++p) {
      const auto c = lm.values[static_cast<std::size_t>(p)];
      if (c < 0 || c >= classes) {
        throw std::out_of_range("label " + std::to_string(c) + " at sample " + std::to_string(b) + " pixel (" +
                                std::to_string(p / w) + ", " + std::to_string(p % w) + ") outside [0, " +
                                std::to_string(classes) + ")");
      }
      onehot[(b * classes + c) * plane + p] = T(1);
    }
  }
  auto& tape = *logits.tape;
  auto y = tape.constant(std::move(onehot));
  const T pixels = static_cast<T>(n * plane);
  auto ce = ops::scale(ops::sum(ops::mul(ops::log_softmax(logits, 1), y)), T(-1) / pixels);
  auto probs = ops::softmax(logits, 1);
  auto overlap = ops::sum(ops::mul(probs, y));
  auto denom = ops::add_scalar(ops::sum(probs), pixels);
  auto dice = ops::add_scalar(ops::scale(ops::div(overlap, denom), T(-2)), T(1));
  return ops::add(ops::scale(ce, static_cast<T>(lambda)), ops::scale(dice, static_cast<T>(1.0 - lambda)));
}

Tensor predict(const ModelConfig& config, const ModelState<float>& state, const Tensor& images) {
  Tape<float> tape;
  auto params = state.params;
  auto buffers = state.buffers;
  Context<float> ctx(tape, params, buffers, false);
  ctx.freeze_parameters(true);
  return model_forward(ctx, tape.constant(images), config).value();
}

std::vector<LabelMap> argmax_labels(const Tensor& logits) {
  const Index n = logits.dim(0), classes = logits.dim(1), h = logits.dim(2), w = logits.dim(3), plane = h * w;
  std::vector<LabelMap> out;
  for (Index b = 0; b < n; ++b) {
    LabelMap m(h, w);
    for (Index p = 0; p < plane; ++p) {
      Index best = 0;
      for (Index c = 1; c < classes; ++c)
        if (logits[(b * classes + c) * plane + p] > logits[(b * classes + best) * plane + p]) best = c;
      m.values[static_cast<std::size_t>(p)] = static_cast<std::int32_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

double lr_schedule(Index step, const Schedule& schedule) {
  if (step < 0 || step >= schedule.total_steps) return 0.0;
  if (step < schedule.warmup_steps) {
    return schedule.base_lr * static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
  }
  const double span = static_cast<double>(schedule.total_steps - schedule.warmup_steps);
  const double progress = static_cast<double>(step - schedule.warmup_steps) / span;
  return schedule.base_lr * std::pow(1.0 - progress, schedule.power);
}

void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v, double lr,
                 Index step, const AdamConfig& adam) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw std::invalid_argument("Adam state does not match the parameter size");
  }
  const double t = static_cast<double>(step + 1);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double gi = grad[i];
    const double mi = adam.beta1 * m[i] + (1.0 - adam.beta1) * gi;
    const double vi = adam.beta2 * v[i] + (1.0 - adam.beta2) * gi * gi;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    param[i] = static_cast<float>(param[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + adam.eps));
  }
}

TrainState make_train_state(const ModelConfig& config, std::uint64_t seed) {
  TrainState s;
  s.model = initialize_model<float>(config, seed);
  s.adam_m = s.model.params.zeros_like();
  s.adam_v = s.model.params.zeros_like();
  return s;
}

NonFiniteLoss::NonFiniteLoss(Index step)
    : std::runtime_error("non-finite loss at step " + std::to_string(step)), step_(step) {}

StepResult train_step(const ModelConfig& config, TrainState& state, const Tensor& images,
                      const std::vector<LabelMap>& labels, const Schedule& schedule, const AdamConfig& adam) {
  Tape<float> tape;
  Context<float> ctx(tape, state.model.params, state.model.buffers, true);
  auto logits = model_forward(ctx, tape.constant(images), config);
  auto loss = hybrid_loss(logits, labels, config.lambda);
  StepResult result;
  result.loss = loss.value().item();
  if (!std::isfinite(result.loss)) throw NonFiniteLoss(state.step);
  const auto grads = tape.backward(loss);

  result.lr = lr_schedule(state.step, schedule);
  for (const auto& [name, var] : ctx.bound()) {
    const Tensor g = grads.of(var);
    adam_update(state.model.params.get(name).data(), g.data(), state.adam_m.get(name).data(), state.adam_v.get(name).data(),
                result.lr, state.step, adam);
  }
  ++state.step;
  return result;
}

#define SAIP_INSTANTIATE_NETWORK(T)                                                         \
  template ModelState<T> initialize_model<T>(const ModelConfig&, std::uint64_t);           \
  template Var<T> model_forward<T>(Context<T>&, Var<T>, const ModelConfig&);               \
  template Var<T> hybrid_loss<T>(Var<T>, const std::vector<LabelMap>&, double);

SAIP_INSTANTIATE_NETWORK(float)
SAIP_INSTANTIATE_NETWORK(double)

}  // namespace saip::network
