#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "saip/gradcheck.hpp"
#include "saip/params.hpp"

/// Finite-difference audits of the differentiable modules at toy sizes.
namespace saip::audit {

template <typename T>
using ModuleFn = std::function<Var<T>(Context<T>&, const std::vector<Var<T>>&)>;

/// Creates the module's parameters once (seeded), then gradchecks the module
/// output with respect to its inputs and every parameter. Parameters appear
/// in the report as "param:<name>".
template <typename T>
GradcheckReport module_gradcheck(const ModuleFn<T>& forward, const NamedTensors<T>& inputs, bool training,
                                 const GradcheckOptions& options);

/// As above, with `prepare` applied to the freshly created parameters. With an
/// `oracle` (the module instantiated in double precision) finite differences
/// are evaluated by the oracle at the same parameters and inputs.
template <typename T>
GradcheckReport module_gradcheck(const ModuleFn<T>& forward, const NamedTensors<T>& inputs, bool training,
                                 const GradcheckOptions& options, const std::function<void(ParamSet<T>&)>& prepare,
                                 const ModuleFn<double>* oracle);

/// f32: float analytic gradients against float64 central differences.
/// f64: double analytic gradients against double central differences.
enum class Precision { f32, f64 };

/// Tolerance of the end-to-end network case in both precisions.
inline constexpr double network_tolerance = 2e-2;

/// Finite-difference settings used for each precision.
GradcheckOptions default_options(Precision precision, std::uint64_t seed);

struct CaseResult {
  std::string name;
  double max_rel_error = 0;
  std::string worst;
  /// Input or "param:<name>" with the largest element-wise error.
  std::string worst_tensor;
  bool passed = false;
};

struct AuditResult {
  std::string module;
  int seeds = 0;
  double tolerance = 0;
  double max_rel_error = 0;
  /// "<case> seed <n> <entry>" of the worst comparison.
  std::string worst;
  /// worst_tensor of the case holding the largest error.
  std::string worst_tensor;
  bool passed = false;
  std::vector<CaseResult> cases;
};

/// Registered module names: encoder, saff, cdc, lhpf, loss, network.
const std::vector<std::string>& module_names();

/// Runs every case of `module` for seeds first_seed .. first_seed + seeds - 1.
/// Throws std::invalid_argument for unknown modules.
AuditResult run_audit(const std::string& module, Precision precision, std::uint64_t first_seed, int seeds);

}  // namespace saip::audit
