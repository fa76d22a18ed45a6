#include <doctest.h>

#include "eve/decoder/decoder.hpp"
#include "eve/numerics/rng.hpp"

using namespace eve;

namespace {

decoder::DecoderConfig small_decoder() {
  decoder::DecoderConfig c;
  c.d_model = 16;
  c.n_layers = 3;
  c.n_heads = 2;
  c.vocab_size = 40;
  c.max_seq_len = 32;
  return c;
}

num::Var<double> prefix(std::size_t n, std::uint64_t seed) {
  num::Rng rng(seed);
  num::Tensor<double> t({n, 16});
  for (auto& v : t.span()) v = rng.normal();
  return num::constant(t);
}

}  // namespace

TEST_SUITE("decoder") {

TEST_CASE("logits have one row per token and the tap one entry per layer") {
  num::ParamStore<double> store;
  const decoder::Decoder<double> dec(small_decoder(), store, 1);
  const std::vector<int> ids{1, 7, 9, 2};
  const auto out = dec.forward(prefix(5, 2), ids);
  CHECK(out.logits.shape() == num::Shape{9, 40});
  REQUIRE(out.tap.per_layer.size() == 3);
  for (const auto& h : out.tap.per_layer) CHECK(h.shape() == num::Shape{9, 16});
}

TEST_CASE("attention is strictly causal") {
  num::ParamStore<double> store;
  const decoder::Decoder<double> dec(small_decoder(), store, 1);
  const auto pre = prefix(4, 3);
  const std::vector<int> a{1, 7, 9, 11, 2}, b{1, 7, 9, 30, 5};
  const auto la = dec.forward(pre, a).logits.value();
  const auto lb = dec.forward(pre, b).logits.value();
  // Rows up to and including the last shared token (index 4 + 2) are identical.
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 40; ++c) CHECK(la.at(r, c) == lb.at(r, c));
  bool differs = false;
  for (std::size_t c = 0; c < 40; ++c) differs |= la.at(7, c) != lb.at(7, c);
  CHECK(differs);
}

TEST_CASE("length and vocabulary limits are enforced") {
  num::ParamStore<double> store;
  const decoder::Decoder<double> dec(small_decoder(), store, 1);
  const std::vector<int> ids(10, 3);
  CHECK_THROWS_AS(dec.forward(prefix(23, 4), ids), decoder::SequenceTooLong);
  const std::vector<int> bad{1, 40};
  CHECK_THROWS(dec.forward(prefix(2, 4), bad));
  auto cfg = small_decoder();
  cfg.n_heads = 3;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("greedy generation is deterministic and matches argmax of forward") {
  num::ParamStore<double> store;
  const decoder::Decoder<double> dec(small_decoder(), store, 5);
  const auto pre = prefix(3, 6);
  const std::vector<int> prompt{1};
  const auto g1 = dec.generate(pre, prompt, 6, -1);
  const auto g2 = dec.generate(pre, prompt, 6, -1);
  CHECK(g1 == g2);
  REQUIRE(g1.size() == 6);
  std::vector<int> ids = prompt;
  for (int expected : g1) {
    const auto logits = dec.forward(pre, ids).logits.value();
    const std::size_t last = logits.rows() - 1;
    int best = 0;
    for (std::size_t c = 1; c < 40; ++c)
      if (logits.at(last, c) > logits.at(last, static_cast<std::size_t>(best))) best = static_cast<int>(c);
    CHECK(best == expected);
    ids.push_back(best);
  }
  CHECK(dec.generate(pre, prompt, 0, -1).empty());
  // Stopping at eos drops it from the output.
  const auto stop = dec.generate(pre, prompt, 6, g1[2]);
  CHECK(stop.size() <= 2);
}

}  // TEST_SUITE
