#pragma once

// Analytic forward-pass FLOPs. One multiply-accumulate counts as 2 FLOPs.
// Dense layers cost 2 * in * out per token; attention adds 2 * n_q * n_k * d
// for scores and the same again for the weighted sum. Norms, softmax,
// activations and biases are ignored.

#include <string>
#include <vector>

#include "eve/training/model.hpp"

namespace eve::cli {

struct FlopItem {
  std::string name;
  double flops = 0.0;
};

struct FlopsReport {
  std::string profile;
  std::vector<FlopItem> vision;
  std::vector<FlopItem> llm;
  std::vector<std::string> assumptions;
  std::size_t vision_tokens = 0;
  std::size_t text_tokens = 0;

  double vision_total() const;
  double llm_total() const;
};

// Encoder-free front end for one image of image_h x image_w pixels.
struct PelFlopsSpec {
  std::size_t image_h = 0, image_w = 0;
  std::size_t conv_stride = 14, pool_stride = 2;
  std::size_t width = 0;    // internal patch-embedding width
  std::size_t d_model = 0;  // decoder width
};
std::vector<FlopItem> pel_flops(const PelFlopsSpec& s, std::size_t* tokens_out = nullptr);

// Plain ViT (with <CLS>) applied to `tiles` square crops.
struct VitFlopsSpec {
  std::size_t resolution = 336, patch = 14, width = 1024, layers = 24, mlp = 4096, tiles = 1;
};
std::vector<FlopItem> vit_flops(const VitFlopsSpec& s, std::size_t* tokens_out = nullptr);

// Decoder over n tokens: per layer 4 d^2 attention projections, 3 d f gated
// MLP and 4 n^2 d attention (full square, no causal halving), plus the LM head.
struct LlmFlopsSpec {
  std::size_t d_model = 4096, layers = 32, ffn = 11008, vocab = 32000, tokens = 0;
};
std::vector<FlopItem> llm_flops(const LlmFlopsSpec& s);

const std::vector<std::string>& flops_profiles();
// `toy` reads model sizes from `model`; the other profiles are fixed.
FlopsReport flops_profile(const std::string& profile, const train::ModelConfig& model);

std::string format_report(const FlopsReport& r);

}  // namespace eve::cli
