#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "saip/network.hpp"

namespace saip::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run depends on: model, synthetic corpus, schedule and the
/// noise preset used for evaluation.
struct RunConfig {
  network::ModelConfig model;
  std::uint64_t seed = 0;

  std::uint64_t train_seed_begin = 0;
  Index train_samples = 256;
  /// Disjoint from the training range.
  std::uint64_t holdout_seed_begin = 1000000;
  Index holdout_samples = 64;

  Index batch = 4;
  network::Schedule schedule{1e-3, 100, 2000, 1.0};
  network::AdamConfig adam;
  Index checkpoint_every = 500;
  /// Noise preset name or "none".
  std::string noise = "none";

  void validate() const;
  bool operator==(const RunConfig& other) const;
};

/// Assigns one key; throws ConfigError for unknown keys or bad values.
void set_key(RunConfig& config, const std::string& key, const std::string& value);

/// Applies `key=value` lines. Blank lines and `#` comments are skipped.
void apply_text(RunConfig& config, const std::string& text, const std::string& origin = "config");

/// Defaults overridden by `text`, then validated.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// One `key = value` line per field in a fixed order.
std::string print_config(const RunConfig& config);

/// FNV-1a 64 of the printed config, as 16 hex digits.
std::string config_hash(const RunConfig& config);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace saip::cli
