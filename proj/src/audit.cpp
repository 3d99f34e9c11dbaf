#include "saip/audit.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <type_traits>

#include "saip/cdc.hpp"
#include "saip/encoder.hpp"
#include "saip/lhpf_stem.hpp"
#include "saip/network.hpp"
#include "saip/saff.hpp"

namespace saip::audit {

template <typename T>
GradcheckReport module_gradcheck(const ModuleFn<T>& forward, const NamedTensors<T>& inputs, bool training,
                                 const GradcheckOptions& options, const std::function<void(ParamSet<T>&)>& prepare,
                                 const ModuleFn<double>* oracle) {
  ParamSet<T> params, buffers;
  {
    Tape<T> tape;
    Context<T> ctx(tape, params, buffers, training);
    std::mt19937_64 rng(options.seed + 0x5bd1e995ULL);
    ctx.enable_building(rng);
    ctx.freeze_parameters(true);
    std::vector<Var<T>> vars;
    for (const auto& [name, t] : inputs) vars.push_back(tape.constant(t));
    forward(ctx, vars);
  }
  if (prepare) prepare(params);

  NamedTensors<T> all = inputs;
  for (const auto& name : params.names()) all.emplace_back("param:" + name, params.get(name));
  const auto n_inputs = static_cast<std::ptrdiff_t>(inputs.size());

  auto wrap = [training, n_inputs]<typename U>(const ModuleFn<U>& f, const ParamSet<U>& p0, const ParamSet<U>& b0) {
    return GradcheckFn<U>([&f, &p0, &b0, training, n_inputs](Tape<U>& tape, const std::vector<Var<U>>& vars) {
      ParamSet<U> p = p0;
      ParamSet<U> b = b0;
      Context<U> ctx(tape, p, b, training);
      for (std::size_t i = 0; i < p0.size(); ++i) ctx.bind(p0.names()[i], vars[static_cast<std::size_t>(n_inputs) + i]);
      return f(ctx, std::vector<Var<U>>(vars.begin(), vars.begin() + n_inputs));
    });
  };
  const auto fn = wrap(forward, params, buffers);
  if (oracle == nullptr) return gradcheck<T>(fn, all, options);
  const auto params64 = params.template cast<double>();
  const auto buffers64 = buffers.template cast<double>();
  const auto oracle_fn = wrap(*oracle, params64, buffers64);
  return gradcheck<T>(fn, all, options, &oracle_fn);
}

template <typename T>
GradcheckReport module_gradcheck(const ModuleFn<T>& forward, const NamedTensors<T>& inputs, bool training,
                                 const GradcheckOptions& options) {
  return module_gradcheck<T>(forward, inputs, training, options, {}, nullptr);
}

GradcheckOptions default_options(Precision precision, std::uint64_t seed) {
  GradcheckOptions o;
  o.seed = seed;
  o.global_scale = true;
  o.eps = 1e-5;
  o.floor = 1e-3;
  o.tolerance = precision == Precision::f32 ? 1e-2 : 1e-5;
  return o;
}

namespace {

template <typename T>
BasicTensor<T> uniform(const Shape& s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  BasicTensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(static_cast<float>(u(rng)));
  return t;
}

template <typename T>
struct Case {
  std::string name;
  ModuleFn<T> forward;
  std::function<NamedTensors<T>(std::mt19937_64&)> inputs;
  bool training = false;
  std::function<void(ParamSet<T>&, std::mt19937_64&)> prepare = {};
  /// Finite-difference step; cases with ReLU use a shorter step so that it
  /// rarely straddles a kink.
  double eps = 1e-5;
};

/// Offset heads pushed to displacements of about half a pixel so that
/// resampling exercises non-trivial interpolation weights.
template <typename T>
void fractional_offsets(ParamSet<T>& params, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 0.03);
  for (const auto& name : params.names()) {
    if (name.find("offset.direction.") == std::string::npos) continue;
    const bool bias = name.ends_with(".bias");
    for (auto& v : params.get(name).data()) v = static_cast<T>(bias ? 0.9 : nd(rng));
  }
}

template <typename T>
std::vector<Case<T>> cases(const std::string& module, std::uint64_t seed) {
  using Vs = std::vector<Var<T>>;
  using Rng = std::mt19937_64;
  std::vector<Case<T>> out;
  if (module == "encoder") {
    out.push_back({"patch_embed", [](Context<T>& ctx, const Vs& v) { return encoder::patch_embed(ctx, "patch", v[0], 4, 4); },
                   [](Rng& r) { return NamedTensors<T>{{"image", uniform<T>({2, 3, 8, 8}, r)}}; }});
    encoder::BlockGeometry block;
    block.in_channels = 8;
    block.out_channels = 8;
    block.heads = 2;
    block.kv_stride = 2;
    block.in_grid = {4, 4};
    out.push_back({"attention_block",
                   [block](Context<T>& ctx, const Vs& v) { return encoder::pooled_attention_block(ctx, "block", v[0], block); },
                   [](Rng& r) { return NamedTensors<T>{{"x", uniform<T>({1, 8, 4, 4}, r)}}; }});
    auto transition = block;
    transition.in_channels = 4;
    transition.q_stride = 2;
    out.push_back({"transition_block",
                   [transition](Context<T>& ctx, const Vs& v) {
                     return encoder::pooled_attention_block(ctx, "block", v[0], transition);
                   },
                   [](Rng& r) { return NamedTensors<T>{{"x", uniform<T>({1, 4, 4, 4}, r)}}; }});
  } else if (module == "saff") {
    const saff::SaffConfig cfg;
    out.push_back({"lowpass_upsample",
                   [cfg](Context<T>& ctx, const Vs& v) { return saff::lp_filter_upsample(ctx, "lp", v[0], v[1], cfg); },
                   [](Rng& r) {
                     return NamedTensors<T>{{"guide", uniform<T>({1, 4, 8, 8}, r)}, {"y", uniform<T>({1, 4, 4, 4}, r)}};
                   }});
    out.push_back({"highpass", [cfg](Context<T>& ctx, const Vs& v) { return saff::hp_filter(ctx, "hp", v[0], v[1], cfg); },
                   [](Rng& r) {
                     return NamedTensors<T>{{"guide", uniform<T>({1, 4, 6, 6}, r)}, {"x", uniform<T>({1, 4, 6, 6}, r)}};
                   }});
    out.push_back({"offset_generator", [](Context<T>& ctx, const Vs& v) { return saff::offset_generator(ctx, "offset", v[0]); },
                   [](Rng& r) { return NamedTensors<T>{{"z", uniform<T>({1, 3, 6, 6}, r)}}; }});
    out.push_back({"fuse", [cfg](Context<T>& ctx, const Vs& v) { return saff::saff_fuse(ctx, "saff", v[0], v[1], cfg); },
                   [](Rng& r) {
                     return NamedTensors<T>{{"x", uniform<T>({1, 4, 8, 8}, r)}, {"y", uniform<T>({1, 8, 4, 4}, r)}};
                   },
                   false, fractional_offsets<T>});
    out.push_back({"fuse_head", [cfg](Context<T>& ctx, const Vs& v) { return saff::saff_fuse(ctx, "saff", v[0], v[1], cfg); },
                   [](Rng& r) {
                     return NamedTensors<T>{{"x", uniform<T>({1, 4, 8, 8}, r)}, {"y", uniform<T>({1, 6, 8, 8}, r)}};
                   },
                   false, fractional_offsets<T>});
  } else if (module == "cdc") {
    out.push_back({"cdc", [](Context<T>& ctx, const Vs& v) { return cdc::cdc_forward(ctx, "cdc", v[0], cdc::CdcConfig{}); },
                   [](Rng& r) { return NamedTensors<T>{{"y", uniform<T>({2, 6, 8, 8}, r)}}; }, true, {}, 1e-6});
  } else if (module == "lhpf") {
    out.push_back({"lhpf_layer", [](Context<T>& ctx, const Vs& v) { return lhpf::lhpf_layer(ctx, "lhpf", v[0], 3); },
                   [](Rng& r) { return NamedTensors<T>{{"x", uniform<T>({1, 4, 6, 6}, r)}}; }, false,
                   [](ParamSet<T>& p, Rng& r) {
                     std::normal_distribution<double> nd(0.0, 1.0);
                     for (auto& v : p.get("lhpf.weight").data()) v = static_cast<T>(nd(r));
                   }});
    out.push_back({"stem",
                   [](Context<T>& ctx, const Vs& v) { return lhpf::stem_forward(ctx, "stem", v[0], lhpf::StemConfig{3, 4, 6}); },
                   [](Rng& r) { return NamedTensors<T>{{"image", uniform<T>({2, 3, 16, 16}, r)}}; }, true, {}, 1e-6});
  } else if (module == "loss") {
    std::mt19937_64 r(seed);
    std::vector<LabelMap> labels;
    for (int n = 0; n < 2; ++n) {
      LabelMap m(4, 4);
      for (auto& c : m.values) c = static_cast<std::int32_t>(r() % 3);
      labels.push_back(m);
    }
    for (const auto& [tag, lambda] : {std::pair{"0.5", 0.5}, {"0", 0.0}, {"1", 1.0}}) {
      out.push_back({std::string("hybrid_loss_lambda_") + tag,
                     [labels, lambda](Context<T>&, const Vs& v) { return network::hybrid_loss(v[0], labels, lambda); },
                     [](Rng& rr) { return NamedTensors<T>{{"logits", uniform<T>({2, 3, 4, 4}, rr, -3, 3)}}; }});
    }
  } else {
    throw std::invalid_argument("unknown audit module '" + module + "'");
  }
  return out;
}

network::ModelConfig toy_network() {
  network::ModelConfig cfg;
  cfg.encoder.channels = 12;
  cfg.encoder.image_height = 32;
  cfg.encoder.image_width = 32;
  cfg.encoder.blocks = {1, 1, 1, 1};
  cfg.stem = {3, 4, 6};
  cfg.classes = 3;
  return cfg;
}

/// Scalar training loss of a toy network: analytic gradients in T against
/// float64 central differences on 32 randomly chosen scalar parameters.
template <typename T>
CaseResult network_case(std::uint64_t seed, const GradcheckOptions& options, double tolerance) {
  const auto cfg = toy_network();
  auto state = network::initialize_model<T>(cfg, seed);
  std::mt19937_64 rng(seed);
  fractional_offsets(state.params, rng);
  const auto images = uniform<T>({2, 3, 32, 32}, rng, 0, 255);
  std::vector<LabelMap> labels;
  for (int n = 0; n < 2; ++n) {
    LabelMap m(32, 32);
    for (Index i = 0; i < 32; ++i)
      for (Index j = 0; j < 32; ++j) m.at(i, j) = static_cast<std::int32_t>((i / 11 + j / 13 + n) % 3);
    labels.push_back(m);
  }

  Tape<T> tape;
  auto buffers = state.buffers;
  Context<T> ctx(tape, state.params, buffers, true);
  const auto loss = network::hybrid_loss(network::model_forward(ctx, tape.constant(images), cfg), labels, cfg.lambda);
  const auto grads = tape.backward(loss);
  const auto& bound = ctx.bound();

  auto params64 = state.params.template cast<double>();
  const auto buffers64 = state.buffers.template cast<double>();
  const auto images64 = images.template cast<double>();
  auto loss64 = [&]() {
    Tape<double> t;
    auto b = buffers64;
    Context<double> c(t, params64, b, true);
    c.freeze_parameters(true);
    return network::hybrid_loss(network::model_forward(c, t.constant(images64), cfg), labels, cfg.lambda).value().item();
  };

  const auto& names = state.params.names();
  std::vector<double> analytic, numeric;
  std::vector<std::string> picks;
  for (int k = 0; k < 32; ++k) {
    const auto& name = names[rng() % names.size()];
    const auto index = static_cast<Index>(rng() % static_cast<std::uint64_t>(state.params.get(name).numel()));
    const auto it = std::find_if(bound.begin(), bound.end(), [&](const auto& b) { return b.first == name; });
    analytic.push_back(static_cast<double>(grads.of(it->second)[index]));
    auto& p = params64.get(name);
    const double orig = p[index];
    p[index] = orig + options.eps;
    const double up = loss64();
    p[index] = orig - options.eps;
    const double down = loss64();
    p[index] = orig;
    numeric.push_back((up - down) / (2.0 * options.eps));
    picks.push_back("param:" + name + "[" + std::to_string(index) + "]");
  }
  double scale = 0;
  for (double n : numeric) scale = std::max(scale, std::abs(n));
  CaseResult result{"model", 0, "", "", true};
  for (std::size_t k = 0; k < picks.size(); ++k) {
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), options.floor * scale, 1e-30});
    const double rel = std::abs(analytic[k] - numeric[k]) / denom;
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst = picks[k];
      result.worst_tensor = picks[k].substr(0, picks[k].find('['));
    }
  }
  result.passed = result.max_rel_error <= tolerance;
  return result;
}

template <typename T>
AuditResult run_typed(const std::string& module, Precision precision, std::uint64_t first_seed, int seeds) {
  AuditResult result;
  result.module = module;
  result.seeds = seeds;
  result.passed = true;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(s);
    auto options = default_options(precision, seed);
    std::vector<CaseResult> run;
    if (module == "network") {
      result.tolerance = network_tolerance;
      options.eps = 1e-6;
      run.push_back(network_case<T>(seed, options, network_tolerance));
    } else {
      result.tolerance = options.tolerance;
      auto typed = cases<T>(module, seed);
      auto oracles = cases<double>(module, seed);
      for (std::size_t i = 0; i < typed.size(); ++i) {
        auto& c = typed[i];
        std::mt19937_64 input_rng(seed * 7919 + 17);
        std::mt19937_64 prepare_rng(seed ^ 0xabcdefULL);
        std::function<void(ParamSet<T>&)> prepare;
        if (c.prepare) prepare = [&](ParamSet<T>& p) { c.prepare(p, prepare_rng); };
        const ModuleFn<double>* oracle = std::is_same_v<T, double> ? nullptr : &oracles[i].forward;
        options.eps = c.eps;
        const auto report = module_gradcheck<T>(c.forward, c.inputs(input_rng), c.training, options, prepare, oracle);
        std::string worst_tensor;
        double worst_element = -1;
        for (const auto& e : report.entries) {
          if (e.name.starts_with("direction[") || e.max_rel_error < worst_element) continue;
          worst_element = e.max_rel_error;
          worst_tensor = e.name;
        }
        run.push_back({c.name, report.max_rel_error, report.worst, worst_tensor, report.passed});
      }
    }
    for (auto& c : run) {
      if (c.max_rel_error >= result.max_rel_error) {
        result.max_rel_error = c.max_rel_error;
        result.worst = c.name + " seed " + std::to_string(seed) + " " + c.worst;
        result.worst_tensor = c.worst_tensor;
      }
      result.passed = result.passed && c.passed;
      result.cases.push_back(std::move(c));
    }
  }
  return result;
}

}  // namespace

const std::vector<std::string>& module_names() {
  static const std::vector<std::string> names{"encoder", "saff", "cdc", "lhpf", "loss", "network"};
  return names;
}

AuditResult run_audit(const std::string& module, Precision precision, std::uint64_t first_seed, int seeds) {
  if (std::find(module_names().begin(), module_names().end(), module) == module_names().end()) {
    throw std::invalid_argument("unknown audit module '" + module + "'");
  }
  return precision == Precision::f32 ? run_typed<float>(module, precision, first_seed, seeds)
                                     : run_typed<double>(module, precision, first_seed, seeds);
}

#define SAIP_INSTANTIATE_AUDIT(T)                                                                                 \
  template GradcheckReport module_gradcheck<T>(const ModuleFn<T>&, const NamedTensors<T>&, bool,                  \
                                               const GradcheckOptions&);                                          \
  template GradcheckReport module_gradcheck<T>(const ModuleFn<T>&, const NamedTensors<T>&, bool,                  \
                                               const GradcheckOptions&, const std::function<void(ParamSet<T>&)>&, \
                                               const ModuleFn<double>*);

SAIP_INSTANTIATE_AUDIT(float)
SAIP_INSTANTIATE_AUDIT(double)

}  // namespace saip::audit
