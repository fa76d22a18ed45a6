#pragma once

#include <cstdint>
#include <string>

#include "eve/numerics/ops.hpp"
#include "eve/numerics/rng.hpp"

namespace eve::num {

// Parameter initialisation. Every tensor draws from its own stream seeded by
// (model seed, parameter name), so adding or removing one parameter group
// never perturbs the values of another.
template <class T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::uint64_t seed, const std::string& name) {
  Rng rng(derive_seed(seed, name));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.span()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <class T>
Var<T> add_normal(ParamStore<T>& store, const std::string& name, Shape shape, double stddev,
                  std::uint64_t seed) {
  return store.add(name, normal_tensor<T>(std::move(shape), stddev, seed, name));
}

template <class T>
Var<T> add_filled(ParamStore<T>& store, const std::string& name, Shape shape, T value) {
  return store.add(name, Tensor<T>(std::move(shape), value));
}

struct RotarySpec {
  double base = 10000.0;
};

// Multi-head cross/self attention with bias-free projections:
//   out = W_o . attention(W_q x_q, W_k x_kv, W_v x_kv)
template <class T>
struct MultiHeadAttention {
  Var<T> wq, wk, wv, wo;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParamStore<T>& store, const std::string& prefix, std::size_t width,
                                   std::size_t heads, std::uint64_t seed, double stddev) {
    if (heads == 0 || width % heads != 0) {
      throw ShapeError(prefix + ": width " + std::to_string(width) + " not divisible by " +
                       std::to_string(heads) + " heads");
    }
    MultiHeadAttention m;
    m.heads = heads;
    m.wq = add_normal(store, prefix + ".wq", {width, width}, stddev, seed);
    m.wk = add_normal(store, prefix + ".wk", {width, width}, stddev, seed);
    m.wv = add_normal(store, prefix + ".wv", {width, width}, stddev, seed);
    m.wo = add_normal(store, prefix + ".wo", {width, width}, stddev, seed);
    return m;
  }

  Var<T> forward(const Var<T>& query_in, const Var<T>& kv_in, const KeySets& keys,
                 const RotarySpec* rotary = nullptr) const {
    Var<T> q = linear(query_in, wq);
    Var<T> k = linear(kv_in, wk);
    const Var<T> v = linear(kv_in, wv);
    if (rotary) {
      q = rope(q, heads, rotary->base);
      k = rope(k, heads, rotary->base);
    }
    return linear(attention(q, k, v, heads, keys), wo);
  }
};

}  // namespace eve::num
