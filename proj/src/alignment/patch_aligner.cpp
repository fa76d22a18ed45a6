#include "eve/alignment/patch_aligner.hpp"

#include <cmath>
#include <stdexcept>

namespace eve::align {

using num::Var;

AlignVariant parse_variant(const std::string& name) {
  if (name == "pairwise") return AlignVariant::kPairwise;
  if (name == "next_patch") return AlignVariant::kNextPatch;
  throw std::invalid_argument("unknown alignment variant '" + name + "' (pairwise|next_patch)");
}

std::string variant_name(AlignVariant v) {
  return v == AlignVariant::kPairwise ? "pairwise" : "next_patch";
}

void PalConfig::validate() const {
  if (interval < 1) throw std::invalid_argument("pal: interval must be >= 1");
  if (!(mse_weight >= 0.0)) throw std::invalid_argument("pal: mse_weight must be >= 0");
  if (heads < 1) throw std::invalid_argument("pal: heads must be >= 1");
}

std::vector<std::size_t> select_layers(std::size_t n_layers, std::size_t interval) {
  if (interval < 1 || interval > n_layers) {
    throw std::invalid_argument("select_layers: interval " + std::to_string(interval) +
                                " outside [1, " + std::to_string(n_layers) + "]");
  }
  std::vector<std::size_t> out;
  for (std::size_t l = interval; l <= n_layers; l += interval) out.push_back(l);
  if (out.back() != n_layers) out.push_back(n_layers);
  return out;
}

template <class T>
Var<T> strip_patch_grid(const Var<T>& hidden, const vision::PatchLayout& layout) {
  if (hidden.value().rank() != 2 || hidden.dim(0) < layout.total_len) {
    throw num::ShapeError("pal: hidden states " + num::to_string(hidden.shape()) +
                          " are shorter than the vision layout (" + std::to_string(layout.total_len) +
                          " tokens)");
  }
  const auto rows = layout.patch_positions();
  return num::gather_rows<T>(hidden, rows);
}

template <class T>
PatchAligner<T>::PatchAligner(const PalConfig& cfg, std::size_t n_layers, std::size_t d_model,
                              std::size_t teacher_dim, num::ParamStore<T>& store, std::uint64_t seed)
    : cfg_(cfg), d_model_(d_model), teacher_dim_(teacher_dim) {
  cfg_.validate();
  layers_ = select_layers(n_layers, cfg_.interval);
  const double std_d = 1.0 / std::sqrt(static_cast<double>(d_model));
  if (layers_.size() > 1) {
    ca3_ = num::MultiHeadAttention<T>::create(store, "pal.ca3", d_model, cfg_.heads, seed, std_d);
  }
  if (teacher_dim != d_model) {
    teacher_proj_ = num::add_normal(store, "pal.teacher_proj.weight", {d_model, teacher_dim},
                                    1.0 / std::sqrt(static_cast<double>(teacher_dim)), seed);
  }
}

template <class T>
Var<T> PatchAligner<T>::aggregate(const decoder::HiddenStatesTap<T>& tap, const vision::PatchLayout& layout,
                                  std::size_t h_t, std::size_t w_t) const {
  if (tap.per_layer.size() < layers_.back()) {
    throw num::ShapeError("pal: tap has " + std::to_string(tap.per_layer.size()) + " layers, need " +
                          std::to_string(layers_.back()));
  }
  if (h_t == 0 || w_t == 0) throw num::ShapeError("pal: empty teacher grid");
  std::vector<Var<T>> grids;
  grids.reserve(layers_.size());
  for (std::size_t l : layers_) {
    const Var<T> grid = strip_patch_grid(tap.per_layer[l - 1], layout);
    grids.push_back(num::adaptive_avg_pool2d(grid, layout.h, layout.w, h_t, w_t));
  }
  const Var<T>& query = grids.back();
  if (grids.size() == 1) return num::l2_normalize_rows(query);

  // Keys for position p are row p of every shallower layer.
  const std::size_t positions = h_t * w_t, others = grids.size() - 1;
  const std::vector<Var<T>> shallower(grids.begin(), grids.end() - 1);
  const Var<T> kv = num::concat_rows<T>(shallower);
  std::vector<std::vector<std::size_t>> lists(positions);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t j = 0; j < others; ++j) lists[p].push_back(j * positions + p);
  const auto keys = num::KeySets::from_lists(lists, others * positions);
  return num::l2_normalize_rows(num::add(query, ca3_.forward(query, kv, keys)));
}

template <class T>
Var<T> PatchAligner<T>::project_teacher(const num::Tensor<T>& teacher_grid) const {
  if (teacher_grid.rank() != 2 || teacher_grid.dim(1) != teacher_dim_) {
    throw num::ShapeError("pal: teacher grid " + num::to_string(teacher_grid.shape()) +
                          " does not have width " + std::to_string(teacher_dim_));
  }
  const Var<T> t = num::constant(teacher_grid);
  if (!teacher_proj_.defined()) return num::l2_normalize_rows(t);
  return num::l2_normalize_rows(num::linear(t, teacher_proj_));
}

template <class T>
Var<T> mse_alignment_loss(const Var<T>& student, const Var<T>& teacher, AlignVariant variant) {
  if (student.shape() != teacher.shape()) {
    throw num::ShapeError("mse_alignment_loss: student " + num::to_string(student.shape()) +
                          " vs teacher " + num::to_string(teacher.shape()));
  }
  if (variant == AlignVariant::kPairwise) return num::mse(student, teacher);
  const std::size_t n = student.dim(0);
  if (n < 2) throw num::ShapeError("mse_alignment_loss: next-patch alignment needs >= 2 tokens");
  std::vector<std::size_t> head(n - 1), tail(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    head[i] = i;
    tail[i] = i + 1;
  }
  return num::mse(num::gather_rows<T>(student, head), num::gather_rows<T>(teacher, tail));
}

template <class T>
Var<T> ce_text_loss(const Var<T>& logits, std::span<const int> labels, std::span<const std::uint8_t> loss_mask) {
  return num::cross_entropy(logits, labels, loss_mask);
}

template <class T>
Var<T> total_loss(const Var<T>& ce, const Var<T>& mse, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
  if (lambda == 0.0 || !mse.defined()) return ce;
  return num::add(ce, num::scale(mse, static_cast<T>(lambda)));
}

#define EVE_INSTANTIATE_ALIGN(T)                                                                   \
  template class PatchAligner<T>;                                                                  \
  template Var<T> strip_patch_grid(const Var<T>&, const vision::PatchLayout&);                     \
  template Var<T> mse_alignment_loss(const Var<T>&, const Var<T>&, AlignVariant);                  \
  template Var<T> ce_text_loss(const Var<T>&, std::span<const int>, std::span<const std::uint8_t>); \
  template Var<T> total_loss(const Var<T>&, const Var<T>&, double);

EVE_INSTANTIATE_ALIGN(float)
EVE_INSTANTIATE_ALIGN(double)

}  // namespace eve::align
