#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "eve/numerics/autograd.hpp"

namespace eve::train {

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Moments are kept in double; parameters stay float.
struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// Creates zero moments for exactly the named parameters.
OptimizerState init_optimizer(const num::ParamStore<float>& params, const std::set<std::string>& trainable);

// Global l2 norm over the gradients of `names` (missing gradients count as 0).
double grad_norm(const num::ParamStore<float>& params, const OptimizerState& state);
// Scales every gradient by max_norm / norm when norm exceeds max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(num::ParamStore<float>& params, const OptimizerState& state, double max_norm);

// One decoupled-weight-decay Adam update on the parameters tracked by
// `state`; everything else is left untouched. All gradients are checked
// before any parameter changes, so a throw leaves the model intact.
void adamw_step(num::ParamStore<float>& params, OptimizerState& state, double lr, const AdamWConfig& cfg = {});

}  // namespace eve::train
