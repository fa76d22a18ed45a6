#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eve/numerics/autograd.hpp"

namespace eve::num {

struct GradCheckOptions {
  double eps = 1e-3;
  // Entries per tensor probed by finite differences; 0 probes every entry.
  std::size_t max_entries_per_tensor = 0;
  // Denominator floor for the relative error, so entries whose true gradient
  // is ~0 are judged on absolute error at this scale.
  double denominator_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

struct NamedTensor {
  std::string name;
  Var<double> var;
};

// Fourth-order central differences
//   (f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h,  h = eps
// against reverse-mode gradients. `f` must rebuild its graph on each call from the current
// parameter values. Relative error per entry is
//   |analytic - numeric| / max(|analytic|, |numeric|, denominator_floor).
// Throws std::runtime_error if f is not finite.
GradCheckResult grad_check(const std::function<Var<double>()>& f,
                           const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace eve::num
