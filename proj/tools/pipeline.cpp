#include "pipeline.hpp"

#include <random>

namespace saip::cli {

datalab::SceneConfig scene_config(const RunConfig& config) {
  return {config.model.encoder.image_height, config.model.encoder.image_width, config.model.classes};
}

network::TrainState train(const RunConfig& config,
                          const std::function<void(const network::StepResult&, const network::TrainState&)>& after_step) {
  config.validate();
  const auto scenes = scene_config(config);
  std::vector<datalab::SegSample> corpus;
  corpus.reserve(static_cast<std::size_t>(config.train_samples));
  for (Index i = 0; i < config.train_samples; ++i) {
    corpus.push_back(datalab::generate_scene(config.train_seed_begin + static_cast<std::uint64_t>(i), scenes));
  }

  auto state = network::make_train_state(config.model, config.seed);
  std::mt19937_64 rng(config.seed);
  std::vector<datalab::SegSample> picked(static_cast<std::size_t>(config.batch));
  while (state.step < config.schedule.total_steps) {
    for (auto& p : picked) p = corpus[rng() % corpus.size()];
    const auto batch = datalab::stack(picked);
    const auto result = network::train_step(config.model, state, batch.images, batch.labels, config.schedule, config.adam);
    if (after_step) after_step(result, state);
  }
  return state;
}

datalab::ConfusionMatrix evaluate(const RunConfig& config, const network::ModelState<float>& model, std::uint64_t first_seed,
                                  Index count, const datalab::NoiseSpec* noise) {
  constexpr Index chunk = 8;
  datalab::ConfusionMatrix confusion(config.model.classes);
  for (Index begin = 0; begin < count; begin += chunk) {
    std::vector<std::uint64_t> seeds;
    for (Index i = begin; i < std::min(count, begin + chunk); ++i) seeds.push_back(first_seed + static_cast<std::uint64_t>(i));
    auto batch = datalab::make_batch(seeds, scene_config(config));
    if (noise) {
      auto spec = *noise;
      spec.seed = noise->seed + seeds.front();
      batch.images = datalab::add_noise_batch(batch.images, spec);
    }
    const auto predicted = network::argmax_labels(network::predict(config.model, model, batch.images));
    for (std::size_t k = 0; k < predicted.size(); ++k) confusion.add(predicted[k], batch.labels[k]);
  }
  return confusion;
}

datalab::Metrics evaluate_holdout(const RunConfig& config, const network::ModelState<float>& model,
                                  const datalab::NoiseSpec* noise) {
  return datalab::compute_metrics(evaluate(config, model, config.holdout_seed_begin, config.holdout_samples, noise));
}

std::map<std::string, Tensor> probe_forward(const RunConfig& config, const network::ModelState<float>& model,
                                            const Tensor& images) {
  Tape<float> tape;
  auto params = model.params;
  auto buffers = model.buffers;
  Context<float> ctx(tape, params, buffers, false);
  ctx.freeze_parameters(true);
  std::map<std::string, Tensor> probe;
  ctx.attach_probe(&probe);
  network::model_forward(ctx, tape.constant(images), config.model);
  return probe;
}

}  // namespace saip::cli
