#include "eve/decoder/decoder.hpp"

#include <algorithm>
#include <string>

namespace eve::decoder {

using num::Var;

void DecoderConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("decoder: n_layers must be >= 1");
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw std::invalid_argument("decoder: d_model " + std::to_string(d_model) +
                                " not divisible by " + std::to_string(n_heads) + " heads");
  }
  if ((d_model / n_heads) % 2 != 0) {
    throw std::invalid_argument("decoder: rotary encoding needs an even head width");
  }
  if (vocab_size < 2) throw std::invalid_argument("decoder: vocab_size must be >= 2");
  if (ffn_hidden() < 1) throw std::invalid_argument("decoder: ffn_mult too small");
}

template <class T>
Decoder<T>::Decoder(const DecoderConfig& cfg, num::ParamStore<T>& store, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model, f = cfg_.ffn_hidden();
  constexpr double kStd = 0.02;
  embed_ = num::add_normal(store, "decoder.embed", {cfg_.vocab_size, d}, kStd, seed);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "decoder.layers." + std::to_string(l);
    Block b;
    b.attn_norm = num::add_filled(store, p + ".attn_norm", {d}, T{1});
    b.attn = num::MultiHeadAttention<T>::create(store, p + ".attn", d, cfg_.n_heads, seed, kStd);
    b.ffn_norm = num::add_filled(store, p + ".ffn_norm", {d}, T{1});
    b.w_gate = num::add_normal(store, p + ".ffn.w_gate", {f, d}, kStd, seed);
    b.w_up = num::add_normal(store, p + ".ffn.w_up", {f, d}, kStd, seed);
    b.w_down = num::add_normal(store, p + ".ffn.w_down", {d, f}, kStd, seed);
    blocks_.push_back(std::move(b));
  }
  final_norm_ = num::add_filled(store, "decoder.final_norm", {d}, T{1});
  lm_head_ = num::add_normal(store, "decoder.lm_head", {cfg_.vocab_size, d}, kStd, seed);
}

template <class T>
Var<T> Decoder<T>::embed(std::span<const int> ids) const {
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg_.vocab_size) {
      throw std::out_of_range("decoder: token id " + std::to_string(ids[i]) + " outside vocab");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return num::gather_rows<T>(embed_, rows);
}

template <class T>
DecoderOutput<T> Decoder<T>::forward(const Var<T>& prefix, std::span<const int> text_ids) const {
  const std::size_t prefix_len = prefix.defined() ? prefix.dim(0) : 0;
  const std::size_t n = prefix_len + text_ids.size();
  if (n == 0) throw std::invalid_argument("decoder: empty sequence");
  if (n > cfg_.max_seq_len) {
    throw SequenceTooLong("decoder: sequence of " + std::to_string(n) + " tokens exceeds maximum " +
                          std::to_string(cfg_.max_seq_len));
  }
  if (prefix.defined() && prefix.dim(1) != cfg_.d_model) {
    throw num::ShapeError("decoder: prefix width " + std::to_string(prefix.dim(1)) + " != d_model " +
                          std::to_string(cfg_.d_model));
  }
  Var<T> x;
  if (prefix.defined() && !text_ids.empty()) {
    const std::vector<Var<T>> parts{prefix, embed(text_ids)};
    x = num::concat_rows<T>(parts);
  } else {
    x = prefix.defined() ? prefix : embed(text_ids);
  }

  const auto causal = num::KeySets::causal(n);
  const num::RotarySpec rotary{cfg_.rope_base};
  DecoderOutput<T> out;
  out.tap.per_layer.reserve(blocks_.size());
  for (const Block& b : blocks_) {
    const Var<T> hn = num::rms_norm(x, b.attn_norm);
    x = num::add(x, b.attn.forward(hn, hn, causal, &rotary));
    const Var<T> fn = num::rms_norm(x, b.ffn_norm);
    const Var<T> gated = num::mul(num::silu(num::linear(fn, b.w_gate)), num::linear(fn, b.w_up));
    x = num::add(x, num::linear(gated, b.w_down));
    out.tap.per_layer.push_back(x);
  }
  out.logits = num::linear(num::rms_norm(x, final_norm_), lm_head_);
  return out;
}

template <class T>
std::vector<int> Decoder<T>::generate(const Var<T>& prefix, std::span<const int> prompt_ids,
                                      std::size_t max_new, int eos) const {
  num::NoGradGuard no_grad;
  std::vector<int> ids(prompt_ids.begin(), prompt_ids.end());
  std::vector<int> produced;
  const std::size_t prefix_len = prefix.defined() ? prefix.dim(0) : 0;
  for (std::size_t step = 0; step < max_new; ++step) {
    if (prefix_len + ids.size() >= cfg_.max_seq_len) break;
    const auto out = forward(prefix, ids);
    const auto last = out.logits.value().row(out.logits.dim(0) - 1);
    const int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    if (next == eos) break;
    produced.push_back(next);
    ids.push_back(next);
  }
  return produced;
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace eve::decoder
