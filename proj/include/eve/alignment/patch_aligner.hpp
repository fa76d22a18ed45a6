#pragma once

// Training-only alignment head. Selected decoder layers are stripped back to
// their h x w patch grids, adaptively pooled to the teacher grid, fused per
// position by cross-attention (query = deepest selected layer, keys/values =
// the shallower ones, residual on the query) and l2-normalised for an MSE
// against teacher features. Nothing here is used at inference.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eve/decoder/decoder.hpp"
#include "eve/numerics/layers.hpp"
#include "eve/vision/patch_embedding.hpp"

namespace eve::align {

enum class AlignVariant { kPairwise, kNextPatch };

AlignVariant parse_variant(const std::string& name);
std::string variant_name(AlignVariant v);

struct PalConfig {
  std::size_t interval = 4;
  AlignVariant variant = AlignVariant::kPairwise;
  double mse_weight = 1.0;
  std::size_t heads = 8;

  void validate() const;
};

// 1-based layer indices {interval, 2*interval, ...} <= L, with L appended if
// it is not already the last entry. Requires 1 <= interval <= L.
std::vector<std::size_t> select_layers(std::size_t n_layers, std::size_t interval);

// Rows of one layer's hidden states at the layout's patch positions,
// [h*w x d] in row-major grid order (CLS and SPL rows dropped).
template <class T>
num::Var<T> strip_patch_grid(const num::Var<T>& hidden, const vision::PatchLayout& layout);

template <class T>
class PatchAligner {
 public:
  // Registers parameters under "pal." in `store`. A teacher projection
  // "pal.teacher_proj" is created only when teacher_dim != d_model.
  PatchAligner(const PalConfig& cfg, std::size_t n_layers, std::size_t d_model, std::size_t teacher_dim,
               num::ParamStore<T>& store, std::uint64_t seed);

  const PalConfig& config() const noexcept { return cfg_; }
  const std::vector<std::size_t>& selected_layers() const noexcept { return layers_; }

  // Returns [h_t*w_t x d_model], every row unit-norm.
  num::Var<T> aggregate(const decoder::HiddenStatesTap<T>& tap, const vision::PatchLayout& layout,
                        std::size_t h_t, std::size_t w_t) const;

  // Teacher grid [n x d_t] -> [n x d_model], re-normalised per row.
  num::Var<T> project_teacher(const num::Tensor<T>& teacher_grid) const;

 private:
  PalConfig cfg_;
  std::vector<std::size_t> layers_;
  std::size_t d_model_;
  std::size_t teacher_dim_;
  num::MultiHeadAttention<T> ca3_;
  num::Var<T> teacher_proj_;
};

extern template class PatchAligner<float>;
extern template class PatchAligner<double>;

// Pairwise: mean over all tokens and channels of (s - t)^2 at equal positions.
// Next-patch: student row i against teacher row i+1 (row-major), last row
// dropped. Both operands [n x d].
template <class T>
num::Var<T> mse_alignment_loss(const num::Var<T>& student, const num::Var<T>& teacher, AlignVariant variant);

// Mean cross-entropy over rows with mask != 0.
template <class T>
num::Var<T> ce_text_loss(const num::Var<T>& logits, std::span<const int> labels,
                         std::span<const std::uint8_t> loss_mask);

// ce + lambda * mse
template <class T>
num::Var<T> total_loss(const num::Var<T>& ce, const num::Var<T>& mse, double lambda);

}  // namespace eve::align
