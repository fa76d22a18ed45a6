#pragma once

// Small LLaMA-style decoder standing in for the pretrained language model:
// pre-RMSNorm blocks, rotary positions over the flattened sequence, gated
// SiLU feed-forward, strictly causal attention over [vision tokens ; text].

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "eve/numerics/layers.hpp"
#include "eve/vision/patch_embedding.hpp"

namespace eve::decoder {

struct DecoderConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 8;
  std::size_t n_heads = 4;
  double ffn_mult = 8.0 / 3.0;
  std::size_t vocab_size = 512;
  double rope_base = 10000.0;
  std::size_t max_seq_len = 2048;

  std::size_t ffn_hidden() const noexcept {
    return static_cast<std::size_t>(ffn_mult * static_cast<double>(d_model) + 0.5);
  }
  void validate() const;
};

class SequenceTooLong : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Post-block outputs of every layer, index 0 = layer 1.
template <class T>
struct HiddenStatesTap {
  std::vector<num::Var<T>> per_layer;
};

template <class T>
struct DecoderOutput {
  num::Var<T> logits;  // [seq_len x vocab]
  HiddenStatesTap<T> tap;
};

template <class T>
class Decoder {
 public:
  // Registers parameters under "decoder." in `store`.
  Decoder(const DecoderConfig& cfg, num::ParamStore<T>& store, std::uint64_t seed);

  const DecoderConfig& config() const noexcept { return cfg_; }

  num::Var<T> embed(std::span<const int> ids) const;

  // `prefix` holds already-embedded rows (vision tokens) and may be undefined.
  DecoderOutput<T> forward(const num::Var<T>& prefix, std::span<const int> text_ids) const;
  DecoderOutput<T> forward(const vision::VisionTokenSequence<T>& vision,
                           std::span<const int> text_ids) const {
    return forward(vision.tokens, text_ids);
  }

  // Greedy decoding without gradient tracking. Stops after max_new tokens or
  // when `eos` is produced (eos is not included in the result).
  std::vector<int> generate(const num::Var<T>& prefix, std::span<const int> prompt_ids,
                            std::size_t max_new, int eos) const;

  struct Block {
    num::Var<T> attn_norm, ffn_norm;
    num::MultiHeadAttention<T> attn;
    num::Var<T> w_gate, w_up, w_down;
  };
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  const num::Var<T>& embedding() const noexcept { return embed_; }
  const num::Var<T>& final_norm() const noexcept { return final_norm_; }
  const num::Var<T>& lm_head() const noexcept { return lm_head_; }

 private:
  DecoderConfig cfg_;
  num::Var<T> embed_;
  std::vector<Block> blocks_;
  num::Var<T> final_norm_, lm_head_;
};

extern template class Decoder<float>;
extern template class Decoder<double>;

}  // namespace eve::decoder
