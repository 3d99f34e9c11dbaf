#pragma once

#include <functional>
#include <map>
#include <string>

#include "run_config.hpp"
#include "saip/datalab/metrics.hpp"
#include "saip/datalab/noise.hpp"
#include "saip/datalab/scene.hpp"

namespace saip::cli {

datalab::SceneConfig scene_config(const RunConfig& config);

/// Trains from scratch on the training split. Batches are drawn uniformly
/// with replacement from the pre-generated split using an RNG seeded by
/// config.seed. `after_step` runs after every update.
network::TrainState train(const RunConfig& config,
                          const std::function<void(const network::StepResult&, const network::TrainState&)>& after_step = {});

/// Confusion matrix over scenes first_seed .. first_seed + count - 1, each
/// optionally corrupted with `noise` (per-image seed noise.seed + scene seed).
datalab::ConfusionMatrix evaluate(const RunConfig& config, const network::ModelState<float>& model, std::uint64_t first_seed,
                                  Index count, const datalab::NoiseSpec* noise = nullptr);

datalab::Metrics evaluate_holdout(const RunConfig& config, const network::ModelState<float>& model,
                                  const datalab::NoiseSpec* noise = nullptr);

/// Eval-mode forward of one image batch, returning every recorded
/// intermediate map (SAFF kernel fields and offsets, decoder head features).
std::map<std::string, Tensor> probe_forward(const RunConfig& config, const network::ModelState<float>& model,
                                            const Tensor& images);

}  // namespace saip::cli
