#include "saip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include "saip/ops.hpp"

namespace saip {

template <typename T>
BasicTensor<T> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& x,
                                T eps) {
  BasicTensor<T> grad(x.shape());
  BasicTensor<T> probe = x;
  for (Index i = 0; i < x.numel(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = static_cast<T>((up - down) / (2.0 * static_cast<double>(eps)));
  }
  return grad;
}

namespace {

template <typename T>
class Projection {
 public:
  Projection(const GradcheckFn<T>& fn, const NamedTensors<T>& inputs, std::uint64_t seed) : fn_(fn) {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (const auto& [name, t] : inputs) vars.push_back(tape.constant(t));
    const auto& out = fn_(tape, vars).value();
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    weights_ = BasicTensor<T>(out.shape());
    for (auto& w : weights_.data()) w = static_cast<T>(static_cast<float>(u(rng)));
  }

  double value(const NamedTensors<T>& inputs) const {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (const auto& [name, t] : inputs) vars.push_back(tape.constant(t));
    const auto& out = fn_(tape, vars).value();
    double acc = 0;
    for (Index i = 0; i < out.numel(); ++i) acc += static_cast<double>(out[i]) * static_cast<double>(weights_[i]);
    return acc;
  }

  std::vector<BasicTensor<T>> gradients(const NamedTensors<T>& inputs) const {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (const auto& [name, t] : inputs) vars.push_back(tape.leaf(t));
    auto out = fn_(tape, vars);
    auto loss = ops::sum(ops::mul(out, tape.constant(weights_)));
    auto grads = tape.backward(loss);
    std::vector<BasicTensor<T>> result;
    for (const auto& v : vars) result.push_back(grads.of(v));
    return result;
  }

 private:
  const GradcheckFn<T>& fn_;
  BasicTensor<T> weights_;
};

template <typename T>
NamedTensors<double> to_double(const NamedTensors<T>& inputs) {
  NamedTensors<double> out;
  for (const auto& [name, t] : inputs) out.emplace_back(name, t.template cast<double>());
  return out;
}

}  // namespace

template <typename T>
GradcheckReport gradcheck(const GradcheckFn<T>& fn, const NamedTensors<T>& inputs, const GradcheckOptions& options,
                          const GradcheckFn<double>* oracle) {
  Projection<T> proj(fn, inputs, options.seed);
  const auto analytic = proj.gradients(inputs);
  std::mt19937_64 rng(options.seed);

  // Finite differences run on a float64 copy of the point when an oracle is
  // given, otherwise in T through fn itself.
  std::optional<Projection<double>> oracle_proj;
  if (oracle != nullptr) oracle_proj.emplace(*oracle, to_double(inputs), options.seed);
  const double eps = oracle != nullptr ? options.eps : static_cast<double>(static_cast<T>(options.eps));
  auto value = [&](const NamedTensors<double>& x) {
    if (oracle_proj) return oracle_proj->value(x);
    NamedTensors<T> xt;
    for (const auto& [name, t] : x) xt.emplace_back(name, t.template cast<T>());
    return proj.value(xt);
  };

  GradcheckReport report;
  const auto base = to_double(inputs);
  auto work = base;
  std::vector<std::vector<Index>> picked(inputs.size());
  std::vector<std::vector<double>> numeric(inputs.size());
  std::vector<double> scales(inputs.size(), 0.0);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& x = inputs[k].second;
    auto& idx = picked[k];
    idx.resize(static_cast<std::size_t>(x.numel()));
    std::iota(idx.begin(), idx.end(), Index(0));
    if (x.numel() > options.max_elements) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(options.max_elements));
      std::sort(idx.begin(), idx.end());
    }
    for (Index i : idx) {
      auto& probe = work[k].second;
      const double orig = probe[i];
      probe[i] = orig + eps;
      const double up = value(work);
      probe[i] = orig - eps;
      const double down = value(work);
      probe[i] = orig;
      numeric[k].push_back((up - down) / (2.0 * eps));
      scales[k] = std::max(scales[k], std::abs(numeric[k].back()));
    }
  }
  if (options.global_scale) {
    const double global = *std::max_element(scales.begin(), scales.end());
    std::fill(scales.begin(), scales.end(), global);
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    GradcheckEntry entry;
    entry.name = inputs[k].first;
    for (std::size_t e = 0; e < picked[k].size(); ++e) {
      const double a = analytic[k][picked[k][e]];
      const double n = numeric[k][e];
      const double denom = std::max({std::abs(a), std::abs(n), options.floor * scales[k], 1e-30});
      const double rel = std::abs(a - n) / denom;
      if (rel > entry.max_rel_error || entry.worst_index < 0) {
        entry.max_rel_error = rel;
        entry.worst_index = picked[k][e];
        entry.analytic = a;
        entry.numeric = n;
      }
    }
    report.entries.push_back(entry);
  }

  double grad_norm = 0;
  for (const auto& g : analytic)
    for (Index i = 0; i < g.numel(); ++i) grad_norm += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  grad_norm = std::sqrt(grad_norm);

  std::normal_distribution<double> nd(0.0, 1.0);
  for (int d = 0; d < options.directions; ++d) {
    std::vector<std::vector<double>> dir(inputs.size());
    double norm = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      dir[k].resize(static_cast<std::size_t>(inputs[k].second.numel()));
      for (auto& v : dir[k]) {
        v = nd(rng);
        norm += v * v;
      }
    }
    norm = std::sqrt(norm);
    auto up = base;
    auto down = base;
    double directional = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      for (Index i = 0; i < inputs[k].second.numel(); ++i) {
        const double v = dir[k][static_cast<std::size_t>(i)] / norm;
        directional += v * static_cast<double>(analytic[k][i]);
        up[k].second[i] = base[k].second[i] + v * eps;
        down[k].second[i] = base[k].second[i] - v * eps;
      }
    }
    const double numeric_dir = (value(up) - value(down)) / (2.0 * eps);
    GradcheckEntry entry;
    entry.name = "direction[" + std::to_string(d) + "]";
    entry.analytic = directional;
    entry.numeric = numeric_dir;
    entry.worst_index = 0;
    entry.max_rel_error = std::abs(directional - numeric_dir) /
                          std::max({std::abs(directional), std::abs(numeric_dir), options.floor * grad_norm, 1e-30});
    report.entries.push_back(entry);
  }

  for (const auto& e : report.entries) {
    if (e.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = e.max_rel_error;
      report.worst = e.name;
    }
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

template Tensor finite_diff_grad<float>(const std::function<double(const Tensor&)>&, const Tensor&, float);
template Tensor64 finite_diff_grad<double>(const std::function<double(const Tensor64&)>&, const Tensor64&, double);
template GradcheckReport gradcheck<float>(const GradcheckFn<float>&, const NamedTensors<float>&,
                                          const GradcheckOptions&, const GradcheckFn<double>*);
template GradcheckReport gradcheck<double>(const GradcheckFn<double>&, const NamedTensors<double>&,
                                           const GradcheckOptions&, const GradcheckFn<double>*);

}  // namespace saip
