#include "run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "saip/datalab/noise.hpp"

namespace saip::cli {

std::string format_double(double v) {
  char buf[512];
  const double mag = std::abs(v);
  const bool plain = mag == 0.0 || (mag >= 1e-5 && mag < 1e15);
  const auto res = plain ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed) : std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError("bad value '" + text + "' for key '" + key + "'");
  }
  return value;
}

template <typename N>
std::vector<N> parse_list(const std::string& key, const std::string& text) {
  std::vector<N> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<N>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for key '" + key + "'");
  return out;
}

template <typename N>
std::string join(const N* values, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

template <typename A>
void assign_array(A& target, const std::string& key, const std::string& text) {
  const auto values = parse_list<int>(key, text);
  if (values.size() != target.size()) {
    throw ConfigError("key '" + key + "' needs " + std::to_string(target.size()) + " values, got " +
                      std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), target.begin());
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename N, typename Member>
Field integer(const char* key, Member member) {
  return {key, [member](const RunConfig& c) { return std::to_string(member(c)); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_number<N>(k, v); }};
}

template <typename Member>
Field real(const char* key, Member member) {
  return {key, [member](const RunConfig& c) { return format_double(member(c)); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_number<double>(k, v); }};
}

template <typename Member>
Field int_array(const char* key, Member member) {
  return {key,
          [member](const RunConfig& c) {
            const auto& a = member(c);
            return join(a.data(), a.size());
          },
          [member](RunConfig& c, const std::string& k, const std::string& v) { assign_array(member(c), k, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      integer<std::uint64_t>("seed", [](auto& c) -> auto& { return c.seed; }),
      integer<Index>("image_height", [](auto& c) -> auto& { return c.model.encoder.image_height; }),
      integer<Index>("image_width", [](auto& c) -> auto& { return c.model.encoder.image_width; }),
      integer<int>("classes", [](auto& c) -> auto& { return c.model.classes; }),
      real("lambda", [](auto& c) -> auto& { return c.model.lambda; }),
      {"ablate", [](const RunConfig& c) { return c.model.ablation.any() ? c.model.ablation.to_string() : std::string("none"); },
       [](RunConfig& c, const std::string&, const std::string& v) {
         try {
           c.model.ablation = network::Ablation::parse(v == "none" ? "" : v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      integer<Index>("channels", [](auto& c) -> auto& { return c.model.encoder.channels; }),
      integer<int>("patch_size", [](auto& c) -> auto& { return c.model.encoder.patch_size; }),
      int_array("blocks", [](auto& c) -> auto& { return c.model.encoder.blocks; }),
      int_array("heads", [](auto& c) -> auto& { return c.model.encoder.heads; }),
      int_array("kv_strides", [](auto& c) -> auto& { return c.model.encoder.kv_strides; }),
      integer<int>("mlp_ratio", [](auto& c) -> auto& { return c.model.encoder.mlp_ratio; }),
      integer<int>("saff_kernel", [](auto& c) -> auto& { return c.model.saff.kernel; }),
      integer<int>("saff_groups", [](auto& c) -> auto& { return c.model.saff.groups; }),
      {"cdc_dilations", [](const RunConfig& c) { return join(c.model.cdc.dilations.data(), c.model.cdc.dilations.size()); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.cdc.dilations = parse_list<int>(k, v); }},
      integer<int>("cdc_kernel", [](auto& c) -> auto& { return c.model.cdc.kernel; }),
      integer<int>("stem_kernel", [](auto& c) -> auto& { return c.model.stem.kernel; }),
      integer<Index>("stem_hidden", [](auto& c) -> auto& { return c.model.stem.hidden_channels; }),
      integer<Index>("stem_out", [](auto& c) -> auto& { return c.model.stem.out_channels; }),
      integer<std::uint64_t>("train_seed_begin", [](auto& c) -> auto& { return c.train_seed_begin; }),
      integer<Index>("train_samples", [](auto& c) -> auto& { return c.train_samples; }),
      integer<std::uint64_t>("holdout_seed_begin", [](auto& c) -> auto& { return c.holdout_seed_begin; }),
      integer<Index>("holdout_samples", [](auto& c) -> auto& { return c.holdout_samples; }),
      integer<Index>("batch", [](auto& c) -> auto& { return c.batch; }),
      real("lr", [](auto& c) -> auto& { return c.schedule.base_lr; }),
      integer<Index>("warmup_steps", [](auto& c) -> auto& { return c.schedule.warmup_steps; }),
      integer<Index>("steps", [](auto& c) -> auto& { return c.schedule.total_steps; }),
      real("lr_power", [](auto& c) -> auto& { return c.schedule.power; }),
      real("adam_beta1", [](auto& c) -> auto& { return c.adam.beta1; }),
      real("adam_beta2", [](auto& c) -> auto& { return c.adam.beta2; }),
      real("adam_eps", [](auto& c) -> auto& { return c.adam.eps; }),
      integer<Index>("checkpoint_every", [](auto& c) -> auto& { return c.checkpoint_every; }),
      {"noise", [](const RunConfig& c) { return c.noise; },
       [](RunConfig& c, const std::string&, const std::string& v) { c.noise = v; }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
    if (noise != "none") datalab::noise_preset(noise);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (train_samples < 1 || holdout_samples < 1) throw ConfigError("train and holdout splits must be non-empty");
  const auto train_end = train_seed_begin + static_cast<std::uint64_t>(train_samples);
  const auto holdout_end = holdout_seed_begin + static_cast<std::uint64_t>(holdout_samples);
  if (train_seed_begin < holdout_end && holdout_seed_begin < train_end) throw ConfigError("holdout seeds overlap training seeds");
  if (batch < 2) throw ConfigError("batch must be at least 2 for batch normalization");
  if (schedule.total_steps < 1 || schedule.warmup_steps < 0 || schedule.warmup_steps >= schedule.total_steps) {
    throw ConfigError("need 0 <= warmup_steps < steps");
  }
  if (!(schedule.base_lr > 0.0)) throw ConfigError("lr must be positive");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
}

bool RunConfig::operator==(const RunConfig& other) const { return print_config(*this) == print_config(other); }

void set_key(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(config, key, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

void apply_text(RunConfig& config, const std::string& text, const std::string& origin) {
  std::stringstream in(text);
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    const auto hash = line.find('#');
    line = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(number) + ": expected key=value");
    try {
      set_key(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  apply_text(config, text);
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig config;
  apply_text(config, ss.str(), path.string());
  config.validate();
  return config;
}

std::string print_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : print_config(config)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace saip::cli
