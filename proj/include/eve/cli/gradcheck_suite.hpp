#pragma once

// Finite-difference checks of every differentiable path in double precision:
//   pel      patch embedding alone (random linear read-out of its tokens)
//   decoder  decoder alone on a fixed vision prefix, text CE
//   pal      alignment head alone on fixed hidden states, alignment MSE
//   ce       cross-entropy w.r.t. the logits
//   mse      normalisation + alignment MSE w.r.t. the student grid
//   full     image -> CE + lambda * MSE through every trainable parameter

#include <string>
#include <vector>

#include "eve/numerics/gradcheck.hpp"
#include "eve/training/model.hpp"

namespace eve::cli {

struct GradcheckComponent {
  std::string name;
  num::GradCheckResult result;
};

struct GradcheckSuiteOptions {
  std::size_t entries_per_tensor = 8;
  std::size_t text_tokens = 6;
  double mse_weight = 1.0;
  std::uint64_t seed = 3;
};

std::vector<GradcheckComponent> run_gradcheck_suite(const train::ModelConfig& cfg,
                                                    const GradcheckSuiteOptions& opts = {});

}  // namespace eve::cli
