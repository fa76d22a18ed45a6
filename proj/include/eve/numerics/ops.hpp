#pragma once

// Differentiable primitives. Matrices are row-major [rows x cols]; spatial
// feature maps are stored channels-last as [h*w x channels] with cells in
// row-major grid order, so token sequences and grids share one layout.

#include <cstdint>
#include <span>
#include <vector>

#include "eve/numerics/autograd.hpp"

namespace eve::num {

template <class T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

template <class T>
T item(const Var<T>& v) {
  if (v.value().size() != 1) throw ShapeError("item() on non-scalar " + to_string(v.shape()));
  return v.value()[0];
}

// Elementwise, identical shapes.
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);
// x [n x d] + b [d] broadcast over rows.
template <class T> Var<T> add_row(const Var<T>& x, const Var<T>& b);

template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> mean(const Var<T>& a);
template <class T> Var<T> reshape(const Var<T>& a, Shape shape);

// a [m x k] * b [k x n]
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
// x [n x in] * W^T + b; W has leading extent `out` and numel out*in, so a
// conv kernel d x C x k x k is used as-is. Bias may be undefined.
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = {});

template <class T> Var<T> silu(const Var<T>& x);
// tanh approximation
template <class T> Var<T> gelu(const Var<T>& x);

// Row-wise ops over the last axis of a 2-D tensor.
template <class T> Var<T> softmax_rows(const Var<T>& x);
template <class T> Var<T> rms_norm(const Var<T>& x, const Var<T>& w, T eps = T(1e-6));
template <class T> Var<T> layer_norm(const Var<T>& x, const Var<T>& w, const Var<T>& b,
                                     T eps = T(1e-5));
// x / max(||x||, eps) per row; a zero row maps to zero.
template <class T> Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12));

// Masked token cross-entropy. logits [n x V]; labels/mask length n.
// Returns the scalar sum over rows with mask != 0.
template <class T>
Var<T> cross_entropy_sum(const Var<T>& logits, std::span<const int> labels,
                         std::span<const std::uint8_t> mask);
// Mean over unmasked rows; throws std::invalid_argument if every row is masked.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels,
                     std::span<const std::uint8_t> mask);

// mean((a - b)^2) over all elements
template <class T> Var<T> mse(const Var<T>& a, const Var<T>& b);

// Rotary position encoding applied per head to x [n x d]; row r gets
// position position_offset + r. Pairs (2i, 2i+1) inside each head rotate by
// pos * base^(-2i/head_dim).
template <class T>
Var<T> rope(const Var<T>& x, std::size_t heads, double base, std::size_t position_offset = 0);

// Which keys each query may attend to, in CSR form.
struct KeySets {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;
  std::size_t num_keys = 0;

  std::size_t num_queries() const noexcept { return offsets.size() - 1; }
  std::span<const std::size_t> keys(std::size_t q) const noexcept {
    return {indices.data() + offsets[q], offsets[q + 1] - offsets[q]};
  }

  static KeySets full(std::size_t num_queries, std::size_t num_keys);
  // Query i sees keys 0..i.
  static KeySets causal(std::size_t n);
  static KeySets from_lists(const std::vector<std::vector<std::size_t>>& lists,
                            std::size_t num_keys);
  // mask[q][k] true = attend. Throws ShapeError on a fully masked row.
  static KeySets from_mask(const std::vector<std::vector<bool>>& mask);
};

// Multi-head softmax(q k^T / sqrt(d/heads)) v restricted to `keys`.
// q [nq x d], k and v [nk x d]. Heads occupy contiguous column blocks.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                 const KeySets& keys);

// Grid ops on channels-last [h*w x d].
template <class T>
Var<T> avg_pool2d(const Var<T>& x, std::size_t h, std::size_t w, std::size_t stride);
// Output cell (i, j) averages input rows [floor(i*h/oh), ceil((i+1)*h/oh)) and
// the analogous column window: every input cell its fractional window touches.
template <class T>
Var<T> adaptive_avg_pool2d(const Var<T>& x, std::size_t h, std::size_t w, std::size_t out_h,
                           std::size_t out_w);

template <class T> Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows);
template <class T> Var<T> concat_rows(std::span<const Var<T>> parts);

// Rearranges a C x H x W image into non-overlapping k x k patches:
// [(H/k)*(W/k) x C*k*k], patch vectors ordered (channel, ky, kx) to match a
// d x C x k x k kernel.
template <class T> Tensor<T> patchify(const Tensor<T>& image, std::size_t k);

// Non-overlapping convolution (kernel == stride) as patchify + linear.
// weight d x C x k x k, bias [d] (may be undefined). Output [(H/k)*(W/k) x d].
template <class T>
Var<T> conv2d_patchify(const Tensor<T>& image, const Var<T>& weight, const Var<T>& bias,
                       std::size_t stride);

}  // namespace eve::num
