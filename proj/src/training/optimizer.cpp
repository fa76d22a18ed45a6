#include "eve/training/optimizer.hpp"

#include <cmath>

namespace eve::train {

OptimizerState init_optimizer(const num::ParamStore<float>& params, const std::set<std::string>& trainable) {
  OptimizerState s;
  for (const auto& name : trainable) {
    const std::size_t n = params.get(name).value().size();
    s.m.emplace(name, std::vector<double>(n, 0.0));
    s.v.emplace(name, std::vector<double>(n, 0.0));
  }
  return s;
}

double grad_norm(const num::ParamStore<float>& params, const OptimizerState& state) {
  double sq = 0.0;
  for (const auto& [name, unused] : state.m) {
    const auto& p = params.get(name);
    if (!p.has_grad()) continue;
    for (float g : p.grad().span()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(num::ParamStore<float>& params, const OptimizerState& state, double max_norm) {
  const double norm = grad_norm(params, state);
  if (max_norm <= 0.0 || !(norm > max_norm)) return norm;
  const double s = max_norm / norm;
  for (const auto& [name, unused] : state.m) {
    auto& p = params.get(name);
    if (!p.has_grad()) continue;
    for (float& g : p.mutable_grad().span()) g = static_cast<float>(g * s);
  }
  return norm;
}

void adamw_step(num::ParamStore<float>& params, OptimizerState& state, double lr, const AdamWConfig& cfg) {
  for (const auto& [name, unused] : state.m) {
    const auto& p = params.get(name);
    if (!p.has_grad()) continue;
    for (float g : p.grad().span()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in parameter '" + name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t), bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, m] : state.m) {
    auto& p = params.get(name);
    auto& v = state.v.at(name);
    auto value = p.mutable_value().span();
    const float* grad = p.has_grad() ? p.grad().data() : nullptr;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad ? grad[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      double x = value[i];
      x -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * x);
      value[i] = static_cast<float>(x);
    }
  }
}

}  // namespace eve::train
