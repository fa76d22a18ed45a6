#include "eve/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "eve/numerics/rng.hpp"

namespace eve::num {

namespace {

double eval_checked(const std::function<Var<double>()>& f) {
  NoGradGuard guard;
  const Var<double> loss = f();
  if (loss.value().size() != 1) throw ShapeError("grad_check: loss is not a scalar");
  const double v = loss.value()[0];
  if (!std::isfinite(v)) throw std::runtime_error("grad_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Var<double>()>& f,
                           const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options) {
  for (const auto& p : params) {
    Var<double> v = p.var;
    v.zero_grad();
  }
  {
    const Var<double> loss = f();
    if (loss.value().size() != 1) throw ShapeError("grad_check: loss is not a scalar");
    if (!std::isfinite(loss.value()[0])) throw std::runtime_error("grad_check: loss is not finite");
    backward(loss);
  }

  GradCheckResult result;
  Rng rng(options.seed);
  for (const auto& p : params) {
    Var<double> v = p.var;
    const std::size_t n = v.value().size();
    const Tensor<double> analytic = v.has_grad() ? v.grad() : Tensor<double>(v.shape());

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries_per_tensor && n > options.max_entries_per_tensor) {
      // partial Fisher-Yates
      for (std::size_t i = 0; i < options.max_entries_per_tensor; ++i) {
        std::swap(idx[i], idx[i + rng.below(n - i)]);
      }
      idx.resize(options.max_entries_per_tensor);
    }

    for (std::size_t i : idx) {
      double& x = v.mutable_value()[i];
      const double saved = x;
      const double h = options.eps;
      auto at = [&](double offset) {
        x = saved + offset;
        return eval_checked(f);
      };
      const double numeric = (at(-2 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2 * h)) / (12.0 * h);
      x = saved;
      const double a = analytic[i];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = rel;
        result.worst_tensor = p.name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace eve::num
