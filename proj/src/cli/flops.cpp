#include "eve/cli/flops.hpp"

#include <cstdio>
#include <stdexcept>

namespace eve::cli {

namespace {
double sum(const std::vector<FlopItem>& items) {
  double t = 0.0;
  for (const auto& i : items) t += i.flops;
  return t;
}
double d(std::size_t v) { return static_cast<double>(v); }
}  // namespace

double FlopsReport::vision_total() const { return sum(vision); }
double FlopsReport::llm_total() const { return sum(llm); }

std::vector<FlopItem> pel_flops(const PelFlopsSpec& s, std::size_t* tokens_out) {
  const std::size_t unit = s.conv_stride * s.pool_stride;
  if (s.image_h % unit || s.image_w % unit || s.image_h == 0 || s.image_w == 0) {
    throw std::invalid_argument("pel_flops: image sides must be positive multiples of " + std::to_string(unit));
  }
  const double c = d(s.width), dm = d(s.d_model);
  const std::size_t h0 = s.image_h / s.conv_stride, w0 = s.image_w / s.conv_stride;
  const std::size_t h = h0 / s.pool_stride, w = w0 / s.pool_stride;
  const double n0 = d(h0 * w0), cells = d(h * w), window = d(s.pool_stride * s.pool_stride);
  const std::size_t tokens = 1 + h * (w + 1);
  if (tokens_out) *tokens_out = tokens;
  return {
      {"conv patchify", 2.0 * n0 * 3.0 * d(s.conv_stride * s.conv_stride) * c},
      {"CA1 query+output projections", 4.0 * cells * c * c},
      {"CA1 key+value projections", 4.0 * n0 * c * c},
      {"CA1 attention", 4.0 * cells * window * c},
      {"CA2 query+output projections", 4.0 * c * c},
      {"CA2 key+value projections", 4.0 * cells * c * c},
      {"CA2 attention", 4.0 * cells * c},
      {"feed-forward", 2.0 * d(tokens) * (c * dm + dm * dm)},
  };
}

std::vector<FlopItem> vit_flops(const VitFlopsSpec& s, std::size_t* tokens_out) {
  const std::size_t grid = s.resolution / s.patch;
  const double patches = d(grid * grid), n = patches + 1.0, w = d(s.width), L = d(s.layers), t = d(s.tiles);
  if (tokens_out) *tokens_out = grid * grid * s.tiles;
  return {
      {"patch embedding", t * 2.0 * patches * 3.0 * d(s.patch * s.patch) * w},
      {"attention projections", t * L * 2.0 * n * 4.0 * w * w},
      {"attention scores+mix", t * L * 4.0 * n * n * w},
      {"MLP", t * L * 4.0 * n * w * d(s.mlp)},
  };
}

std::vector<FlopItem> llm_flops(const LlmFlopsSpec& s) {
  const double n = d(s.tokens), dm = d(s.d_model), L = d(s.layers);
  return {
      {"attention projections", L * 2.0 * n * 4.0 * dm * dm},
      {"attention scores+mix", L * 4.0 * n * n * dm},
      {"gated MLP", L * 2.0 * n * 3.0 * dm * d(s.ffn)},
      {"LM head", 2.0 * n * dm * d(s.vocab)},
  };
}

const std::vector<std::string>& flops_profiles() {
  static const std::vector<std::string> p{"toy", "eve7b", "eve7b_hd", "llava15", "llava16_hd"};
  return p;
}

namespace {

constexpr std::size_t kTextTokens7b = 512;
constexpr std::size_t kToyTextTokens = 16;

LlmFlopsSpec vicuna7b(std::size_t tokens) { return {4096, 32, 11008, 32000, tokens}; }

FlopsReport eve_profile(const std::string& name, std::size_t edge) {
  FlopsReport r;
  r.profile = name;
  r.vision = pel_flops({edge, edge, 14, 2, 1024, 4096}, &r.vision_tokens);
  r.text_tokens = kTextTokens7b;
  r.llm = llm_flops(vicuna7b(r.vision_tokens + r.text_tokens));
  r.assumptions = {
      "image " + std::to_string(edge) + "x" + std::to_string(edge) + ", conv stride 14, pool stride 2",
      "patch-embedding width 1024, decoder width 4096",
      "vision tokens = 1 + h*(w+1) = " + std::to_string(r.vision_tokens) + " (<CLS>, patches, <SPL> per row)",
      "LLM: Vicuna-7B shape (32 layers, d 4096, MLP 11008, vocab 32000)",
      "text tokens = " + std::to_string(r.text_tokens),
  };
  return r;
}

FlopsReport llava_profile(const std::string& name, std::size_t tiles) {
  FlopsReport r;
  r.profile = name;
  r.vision = vit_flops({336, 14, 1024, 24, 4096, tiles}, &r.vision_tokens);
  r.text_tokens = kTextTokens7b;
  r.llm = llm_flops(vicuna7b(r.vision_tokens + r.text_tokens));
  r.assumptions = {
      "vision encoder: ViT-L/14 at 336x336 (24 layers, d 1024, MLP 4096), 577 tokens per crop incl. <CLS>",
      "crops = " + std::to_string(tiles) + (tiles > 1 ? " (2x2 high-resolution grid + 1 global view)" : ""),
      "projector MLP excluded from the vision part",
      "vision tokens to the LLM = 576 per crop = " + std::to_string(r.vision_tokens),
      "LLM: Vicuna-7B shape (32 layers, d 4096, MLP 11008, vocab 32000)",
      "text tokens = " + std::to_string(r.text_tokens),
  };
  return r;
}

}  // namespace

FlopsReport flops_profile(const std::string& profile, const train::ModelConfig& model) {
  if (profile == "eve7b") return eve_profile(profile, 672);
  if (profile == "eve7b_hd") return eve_profile(profile, 1344);
  if (profile == "llava15") return llava_profile(profile, 1);
  if (profile == "llava16_hd") return llava_profile(profile, 5);
  if (profile == "toy") {
    FlopsReport r;
    r.profile = profile;
    const auto& p = model.pel;
    r.vision = pel_flops({336, 448, p.conv_stride, p.pool_stride, p.width(), p.d_model}, &r.vision_tokens);
    r.text_tokens = kToyTextTokens;
    const auto& dc = model.decoder;
    r.llm = llm_flops({dc.d_model, dc.n_layers, dc.ffn_hidden(), dc.vocab_size, r.vision_tokens + r.text_tokens});
    r.assumptions = {
        "image 336x448, conv stride " + std::to_string(p.conv_stride) + ", pool stride " + std::to_string(p.pool_stride),
        "patch-embedding width " + std::to_string(p.width()) + ", decoder width " + std::to_string(dc.d_model),
        "vision tokens = 1 + h*(w+1) = " + std::to_string(r.vision_tokens),
        "decoder: " + std::to_string(dc.n_layers) + " layers, MLP " + std::to_string(dc.ffn_hidden()) + ", vocab " +
            std::to_string(dc.vocab_size),
        "text tokens = " + std::to_string(r.text_tokens),
    };
    return r;
  }
  throw std::invalid_argument("unknown FLOPs profile '" + profile + "' (toy|eve7b|eve7b_hd|llava15|llava16_hd)");
}

std::string format_report(const FlopsReport& r) {
  std::string out = "profile: " + r.profile + "\n";
  char buf[160];
  out += "assumptions:\n";
  for (const auto& a : r.assumptions) out += "  - " + a + "\n";
  out += "  - 1 multiply-accumulate = 2 FLOPs; norms, softmax, activations and biases ignored\n";
  out += "vision part:\n";
  for (const auto& i : r.vision) {
    std::snprintf(buf, sizeof buf, "  %-32s %14.4f GFLOPs\n", i.name.c_str(), i.flops / 1e9);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "  %-32s %14.4f GFLOPs\n", "total", r.vision_total() / 1e9);
  out += buf;
  out += "LLM part:\n";
  for (const auto& i : r.llm) {
    std::snprintf(buf, sizeof buf, "  %-32s %14.4f TFLOPs\n", i.name.c_str(), i.flops / 1e12);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "  %-32s %14.4f TFLOPs\n", "total", r.llm_total() / 1e12);
  out += buf;
  return out;
}

}  // namespace eve::cli
