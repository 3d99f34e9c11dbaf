#include "commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "pipeline.hpp"
#include "run_config.hpp"
#include "saip/audit.hpp"
#include "saip/checkpoint.hpp"
#include "saip/datalab/image_io.hpp"
#include "saip/lhpf_stem.hpp"

namespace saip::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::string ablate;
  std::string noise;
  std::uint64_t seed = 0;
  Index steps = 0;
  std::string out_root = "runs";
  std::string run_dir;

  std::string checkpoint;
  std::string split = "holdout";
  std::string what;
  std::uint64_t sample_seed = 0;
  std::vector<Index> channels{0, 1, 2, 3};
  std::string inspect_out;

  std::string module;
  std::uint64_t first_seed = 1;
  int seeds = 1;
  std::string precision = "f32";
  double tolerance = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_key(config, s.substr(0, eq), s.substr(eq + 1));
  }
}

fs::path unique_run_dir(const fs::path& root, const RunConfig& config) {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &utc);
  const std::string base = config_hash(config) + "-" + stamp;
  fs::path dir = root / base;
  for (int k = 1; fs::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
  return dir;
}

std::string checkpoint_name(Index step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06lld.ckpt", static_cast<long long>(step));
  return buf;
}

int cmd_train(const Options& opt, CLI::App& app, std::ostream& out, std::ostream& err) {
  RunConfig config;
  if (!opt.config_path.empty()) apply_text(config, read_file(opt.config_path), opt.config_path);
  apply_overrides(config, opt.sets);
  if (app.count("--ablate")) set_key(config, "ablate", opt.ablate.empty() ? "none" : opt.ablate);
  if (app.count("--noise")) set_key(config, "noise", opt.noise);
  if (app.count("--seed")) config.seed = opt.seed;
  if (app.count("--steps")) config.schedule.total_steps = opt.steps;
  config.validate();

  const fs::path dir = opt.run_dir.empty() ? unique_run_dir(opt.out_root, config) : fs::path(opt.run_dir);
  fs::create_directories(dir / "checkpoints");
  write_file(dir / "config.txt", print_config(config));
  out << "run_dir " << dir.string() << "\n";

  std::ofstream loss(dir / "loss.csv", std::ios::trunc);
  loss << "step,loss,lr\n";
  double window = 0;
  network::TrainState state;
  try {
    state = train(config, [&](const network::StepResult& r, const network::TrainState& s) {
      loss << s.step << ',' << format_double(r.loss) << ',' << format_double(r.lr) << '\n';
      window += r.loss;
      if (s.step % 100 == 0) {
        out << "step " << s.step << " loss " << fixed(window / 100) << " lr " << sci(r.lr) << "\n" << std::flush;
        window = 0;
      }
      if (s.step % config.checkpoint_every == 0) checkpoint::save(s, dir / "checkpoints" / checkpoint_name(s.step));
    });
  } catch (const network::NonFiniteLoss& e) {
    loss.flush();
    err << "error: " << e.what() << "\n";
    return numeric_failure;
  }
  loss.close();
  checkpoint::save(state, dir / "final.ckpt");

  const auto metrics = evaluate_holdout(config, state.model);
  write_file(dir / "metrics.csv", datalab::metrics_csv(metrics));
  out << datalab::metrics_csv(metrics);
  return ok;
}

RunConfig config_for_checkpoint(const Options& opt) {
  fs::path path = opt.config_path;
  if (path.empty()) {
    const fs::path ckpt_dir = fs::path(opt.checkpoint).parent_path();
    path = fs::exists(ckpt_dir / "config.txt") ? ckpt_dir / "config.txt" : ckpt_dir.parent_path() / "config.txt";
  }
  RunConfig config;
  apply_text(config, read_file(path), path.string());
  apply_overrides(config, opt.sets);
  config.validate();
  return config;
}

network::TrainState load_model(const Options& opt, const RunConfig& config) {
  return checkpoint::load_compatible(opt.checkpoint, network::make_train_state(config.model, 0));
}

int cmd_eval(const Options& opt, CLI::App& app, std::ostream& out) {
  const auto config = config_for_checkpoint(opt);
  const std::string noise_name = app.count("--noise") ? opt.noise : config.noise;
  std::vector<datalab::NamedNoise> noises;
  if (noise_name != "none") noises = datalab::noise_preset(noise_name);
  const auto state = load_model(opt, config);

  const bool train_split = opt.split == "train";
  const auto first = train_split ? config.train_seed_begin : config.holdout_seed_begin;
  const auto count = train_split ? config.train_samples : config.holdout_samples;
  const auto clean = datalab::compute_metrics(evaluate(config, state.model, first, count));
  out << "split," << opt.split << "\n" << datalab::metrics_csv(clean);
  for (const auto& n : noises) {
    const auto noisy = datalab::compute_metrics(evaluate(config, state.model, first, count, &n.spec));
    out << "noisy_mIoU," << n.name << ',' << fixed(noisy.miou) << "\n";
    out << "drop_mIoU," << n.name << ',' << fixed(clean.miou - noisy.miou) << "\n";
  }
  return ok;
}

// Kernels (C, 1, K, K) laid out in a grid, each tap drawn as a scale x scale block.
datalab::Image8 kernel_grid(const Tensor& kernels, int scale) {
  const Index c = kernels.dim(0), k = kernels.dim(2);
  const Index cols = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(c))));
  const Index rows = (c + cols - 1) / cols;
  const Index cell = k * scale;
  const Index width = cols * cell + cols + 1, height = rows * cell + rows + 1;
  float lo = kernels[0], hi = kernels[0];
  for (float v : kernels.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  datalab::Image8 img{width, height, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(width * height), 255)};
  for (Index ch = 0; ch < c; ++ch) {
    const Index top = (ch / cols) * (cell + 1) + 1, left = (ch % cols) * (cell + 1) + 1;
    for (Index y = 0; y < cell; ++y)
      for (Index x = 0; x < cell; ++x) {
        const float v = kernels.at({ch, 0, y / scale, x / scale});
        const float t = hi > lo ? (v - lo) / (hi - lo) : 0.0f;
        img.pixels[static_cast<std::size_t>((top + y) * width + left + x)] = static_cast<std::uint8_t>(std::lround(t * 254.0f));
      }
  }
  return img;
}

std::string file_stem(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

int inspect_stem(const RunConfig& config, const network::TrainState& state, const fs::path& dir, std::ostream& out,
                 std::ostream& err) {
  if (config.model.ablation.stem) {
    err << "error: model was trained without the stem\n";
    return usage_error;
  }
  const int k = config.model.stem.kernel;
  for (const char* layer : {"stem.lhpf1", "stem.lhpf2"}) {
    Tape<float> tape;
    const auto kernels = lhpf::modulated_kernels(tape.constant(state.model.params.get(std::string(layer) + ".weight")), k).value();
    const fs::path file = dir / (std::string(layer) + "_kernels.pgm");
    datalab::write_image(file, kernel_grid(kernels, 8));
    out << layer << " kernels " << kernels.dim(0) << " size " << k << "x" << k << " file " << file.string() << "\n";
  }
  return ok;
}

int inspect_saff(const std::map<std::string, Tensor>& probe, const fs::path& dir, std::ostream& out,
                 std::ostream& err) {
  int written = 0;
  for (const auto& [name, field] : probe) {
    if (!name.ends_with(".kernels")) continue;
    const bool highpass = name.find(".hp") != std::string::npos;
    // Fields are (N, G, K*K, H, W); sample 0 is dumped.
    const Index groups = field.dim(1), taps = field.dim(2), h = field.dim(3), w = field.dim(4);
    // High-pass fields are identity minus a softmax; entropy is taken of that softmax.
    std::vector<float> entropy(static_cast<std::size_t>(h * w), 0.0f);
    for (Index g = 0; g < groups; ++g)
      for (Index t = 0; t < taps; ++t)
        for (Index p = 0; p < h * w; ++p) {
          float v = field[(g * taps + t) * h * w + p];
          if (highpass) v = (t == taps / 2 ? 1.0f : 0.0f) - v;
          if (v > 0) entropy[static_cast<std::size_t>(p)] -= v * std::log(v) / static_cast<float>(groups);
        }
    const auto [lo, hi] = std::minmax_element(entropy.begin(), entropy.end());
    datalab::Image8 img{w, h, 1, std::vector<std::uint8_t>(entropy.size())};
    const float max_entropy = std::log(static_cast<float>(taps));
    for (std::size_t i = 0; i < entropy.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(entropy[i] / max_entropy, 0.0f, 1.0f) * 255.0f));
    }
    const fs::path file = dir / (file_stem(name) + "_entropy.pgm");
    datalab::write_image(file, img);
    out << name << " " << h << "x" << w << " entropy_min " << fixed(*lo) << " entropy_max " << fixed(*hi) << " file "
        << file.string() << "\n";
    ++written;
  }
  if (written == 0) {
    err << "error: model has no SAFF kernel fields\n";
    return usage_error;
  }
  return ok;
}

int inspect_offsets(const RunConfig& config, const std::map<std::string, Tensor>& probe, const fs::path& dir,
                    std::ostream& out, std::ostream& err) {
  float overall = 0;
  int written = 0;
  for (const auto& [name, offsets] : probe) {
    if (!name.ends_with(".offsets")) continue;
    const Index h = offsets.dim(2), w = offsets.dim(3);
    std::vector<float> magnitude(static_cast<std::size_t>(h * w));
    for (Index p = 0; p < h * w; ++p) magnitude[static_cast<std::size_t>(p)] = std::hypot(offsets[p], offsets[h * w + p]);
    const auto [lo, hi] = std::minmax_element(magnitude.begin(), magnitude.end());
    overall = std::max(overall, *hi);
    const fs::path file = dir / (file_stem(name) + "_magnitude.pgm");
    datalab::write_image(file, datalab::normalize_plane(magnitude.data(), h, w));
    out << name << " min " << fixed(*lo) << " max " << fixed(*hi) << " file " << file.string() << "\n";
    ++written;
  }
  if (written == 0) {
    err << "error: model has no SAFF offsets\n";
    return usage_error;
  }
  out << "offset_max " << fixed(overall) << " kernel " << config.model.saff.kernel << "\n";
  return ok;
}

int inspect_features(const Options& opt, const std::map<std::string, Tensor>& probe, const fs::path& dir, std::ostream& out,
                     std::ostream& err) {
  const Tensor& head = probe.at("head");
  const Index channels = head.dim(1), h = head.dim(2), w = head.dim(3);
  for (Index c : opt.channels) {
    if (c < 0 || c >= channels) {
      err << "error: feature channel " << c << " out of range [0, " << channels << ")\n";
      return usage_error;
    }
  }
  for (Index c : opt.channels) {
    const fs::path file = dir / ("features_c" + std::to_string(c) + ".pgm");
    datalab::write_image(file, datalab::normalize_plane(head.data().data() + c * h * w, h, w));
  }
  out << "features " << opt.channels.size() << " of " << channels << " channels " << h << "x" << w << "\n";
  return ok;
}

int cmd_inspect(const Options& opt, CLI::App& app, std::ostream& out, std::ostream& err) {
  const auto config = config_for_checkpoint(opt);
  const auto state = load_model(opt, config);
  const fs::path dir = opt.inspect_out.empty() ? fs::path(opt.checkpoint).parent_path() / "inspect" : fs::path(opt.inspect_out);
  fs::create_directories(dir);
  if (opt.what == "stem-kernels") return inspect_stem(config, state, dir, out, err);

  const auto seed = app.count("--sample-seed") ? opt.sample_seed : config.holdout_seed_begin;
  const std::uint64_t seeds[] = {seed};
  const auto probe = probe_forward(config, state.model, datalab::make_batch(seeds, scene_config(config)).images);
  if (opt.what == "saff-kernels") return inspect_saff(probe, dir, out, err);
  if (opt.what == "offsets") return inspect_offsets(config, probe, dir, out, err);
  return inspect_features(opt, probe, dir, out, err);
}

int cmd_gradcheck(const Options& opt, CLI::App& app, std::ostream& out, std::ostream& err) {
  const auto& modules = audit::module_names();
  if (std::find(modules.begin(), modules.end(), opt.module) == modules.end()) {
    std::string known;
    for (const auto& m : modules) known += (known.empty() ? "" : ", ") + m;
    err << "error: unknown module '" << opt.module << "' (available: " << known << ")\n";
    return usage_error;
  }
  const auto precision = opt.precision == "f64" ? audit::Precision::f64 : audit::Precision::f32;
  const auto result = audit::run_audit(opt.module, precision, opt.first_seed, opt.seeds);
  const std::size_t per_seed = result.cases.size() / static_cast<std::size_t>(opt.seeds);
  for (std::size_t i = 0; i < result.cases.size(); ++i) {
    const auto& c = result.cases[i];
    out << "case " << c.name << " seed " << opt.first_seed + i / per_seed << " max_rel_error " << sci(c.max_rel_error) << "\n";
  }
  const double tolerance = app.count("--tolerance") ? opt.tolerance : result.tolerance;
  out << "module " << opt.module << " precision " << opt.precision << " seeds " << opt.seeds << " max_rel_error "
      << sci(result.max_rel_error) << " tolerance " << sci(tolerance) << "\n";
  if (!(result.max_rel_error <= tolerance)) {
    err << "gradcheck breach in " << opt.module << ": " << result.worst_tensor << " max_rel_error " << sci(result.max_rel_error)
        << " (" << result.worst << ")\n";
    return verification_failure;
  }
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options opt;
  CLI::App app{"Spectral-aware segmentation network: training, evaluation and inspection", "saipnet"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train on the synthetic corpus and write a run directory");
  train->add_option("--config", opt.config_path, "key=value run config file");
  train->add_option("--set", opt.sets, "Override one config key (key=value), repeatable");
  train->add_option("--ablate", opt.ablate, "Comma-separated modules to replace: saff,cdc,stem,encoder");
  train->add_option("--noise", opt.noise, "Noise preset used for evaluation");
  train->add_option("--seed", opt.seed, "Initialization and batch sampling seed");
  train->add_option("--steps", opt.steps, "Number of optimizer steps");
  train->add_option("--out", opt.out_root, "Root for run directories named <config hash>-<timestamp>");
  train->add_option("--run-dir", opt.run_dir, "Exact run directory, overriding --out");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, optionally under noise");
  eval->add_option("--checkpoint", opt.checkpoint, "Checkpoint file")->required();
  eval->add_option("--config", opt.config_path, "Run config (default: config.txt of the run directory)");
  eval->add_option("--set", opt.sets, "Override one config key (key=value), repeatable");
  eval->add_option("--split", opt.split, "Scene split")->check(CLI::IsMember({"holdout", "train"}));
  eval->add_option("--noise", opt.noise, "Noise preset: table5, table5-gaussian, table5-salt-pepper, table5-speckle");

  auto* inspect = app.add_subcommand("inspect", "Dump learned filters and feature maps as PGM images");
  inspect->add_option("--checkpoint", opt.checkpoint, "Checkpoint file")->required();
  inspect->add_option("--config", opt.config_path, "Run config (default: config.txt of the run directory)");
  inspect->add_option("--set", opt.sets, "Override one config key (key=value), repeatable");
  inspect->add_option("--what", opt.what, "What to dump")
      ->required()
      ->check(CLI::IsMember({"stem-kernels", "saff-kernels", "offsets", "features"}));
  inspect->add_option("--sample-seed", opt.sample_seed, "Scene seed (default: first held-out scene)");
  inspect->add_option("--channels", opt.channels, "Feature channels to dump")->delimiter(',');
  inspect->add_option("--out", opt.inspect_out, "Output directory (default: inspect/ next to the checkpoint)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit of one module");
  gradcheck->add_option("--module", opt.module, "encoder, saff, cdc, lhpf, loss or network")->required();
  gradcheck->add_option("--seed", opt.first_seed, "First seed");
  gradcheck->add_option("--seeds", opt.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  gradcheck->add_option("--precision", opt.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  gradcheck->add_option("--tolerance", opt.tolerance, "Override the pass threshold");

  std::vector<std::string> argv_storage{"saipnet"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return usage_error;
  }

  try {
    if (*train) return cmd_train(opt, *train, out, err);
    if (*eval) return cmd_eval(opt, *eval, out);
    if (*inspect) return cmd_inspect(opt, *inspect, out, err);
    return cmd_gradcheck(opt, *gradcheck, out, err);
  } catch (const checkpoint::CheckpointError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const network::NonFiniteLoss& e) {
    err << "error: " << e.what() << "\n";
    return numeric_failure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return usage_error;
}

}  // namespace saip::cli
