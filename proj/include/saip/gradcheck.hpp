#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "saip/autograd.hpp"

namespace saip {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
/// element of x.
template <typename T>
BasicTensor<T> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& x,
                                T eps);

/// Builds the function under test on a fresh tape from its (leaf) inputs.
template <typename T>
using GradcheckFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

struct GradcheckOptions {
  double eps = 1e-3;
  /// Pass threshold on the worst relative error.
  double tolerance = 1e-2;
  /// Relative errors divide by max(|analytic|, |numeric|, floor * scale), where
  /// scale is the largest numeric gradient magnitude of that input.
  double floor = 1e-2;
  /// Use the largest numeric gradient over all inputs as the scale.
  bool global_scale = false;
  /// Inputs larger than this are checked on a seeded random subset.
  Index max_elements = 64;
  /// Random unit-direction derivative probes over all inputs. Their error is
  /// floored by floor * ||grad||.
  int directions = 4;
  std::uint64_t seed = 0;
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0;
  Index worst_index = -1;
  double analytic = 0;
  double numeric = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0;
  std::string worst;
  bool passed = false;
};

/// Compares reverse-mode gradients of the scalar projection sum(w * f(x)),
/// with fixed random weights w, against central finite differences. With an
/// `oracle` (the same function in double precision) the differences are taken
/// on a float64 copy of the point instead of through `fn`.
template <typename T>
GradcheckReport gradcheck(const GradcheckFn<T>& fn, const NamedTensors<T>& inputs, const GradcheckOptions& options,
                          const GradcheckFn<double>* oracle = nullptr);

}  // namespace saip
