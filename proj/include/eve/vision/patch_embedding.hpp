#pragma once

// Encoder-free image front end: raw pixels -> flattened vision tokens.
//
//   conv (kernel = stride)          H x W image -> h0 x w0 grid
//   avg pool per s x s slice        -> h x w grid
//   CA1: each pooled cell queries its own s*s source cells, added residually
//   CA2: a learned <CLS> query summarises all pooled cells
//   layout [CLS, row 0, SPL, row 1, SPL, ...], one shared <SPL> vector
//   two-layer feed-forward into the decoder width, applied to every token
//
// No absolute position embedding is used anywhere; 2-D structure reaches the
// decoder only through the <SPL> row terminators.

#include <cstdint>
#include <vector>

#include "eve/data/image.hpp"
#include "eve/numerics/layers.hpp"

namespace eve::vision {

struct PelConfig {
  std::size_t conv_stride = 14;
  std::size_t pool_stride = 2;
  std::size_t heads = 8;
  std::size_t pel_dim = 0;  // internal width; 0 means d_model
  std::size_t d_model = 128;
  std::size_t max_edge = 672;

  std::size_t width() const noexcept { return pel_dim ? pel_dim : d_model; }
  // Image sides are multiples of this.
  std::size_t unit() const noexcept { return conv_stride * pool_stride; }
  void validate() const;
};

struct PatchLayout {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t cls_index = 0;
  std::vector<std::size_t> spl_indices;
  std::size_t total_len = 0;

  static PatchLayout for_grid(std::size_t h, std::size_t w);
  // Sequence position of pooled cell (r, c).
  std::size_t position_of(std::size_t r, std::size_t c) const noexcept { return 1 + r * (w + 1) + c; }
  // Sequence positions of all pooled cells in row-major grid order.
  std::vector<std::size_t> patch_positions() const;
};

struct ImageExtent {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const ImageExtent&, const ImageExtent&) = default;
};

// Aspect-preserving downscale so the long side fits max_edge (never upscales),
// then each side floored to a multiple of unit(), minimum one unit.
ImageExtent conforming_extent(std::size_t height, std::size_t width, const PelConfig& cfg);

// Resamples straight to conforming_extent and scales pixels to [-1, 1].
num::Tensor<float> preprocess_image(const data::Image& raw, const PelConfig& cfg);

template <class T>
struct FeatureGrid {
  num::Var<T> cells;  // [h*w x channels]
  std::size_t h = 0;
  std::size_t w = 0;
};

template <class T>
struct VisionTokenSequence {
  num::Var<T> tokens;  // [layout.total_len x d_model]
  PatchLayout layout;
};

template <class T>
class PatchEmbedding {
 public:
  // Registers parameters under "pel." in `store`.
  PatchEmbedding(const PelConfig& cfg, num::ParamStore<T>& store, std::uint64_t seed);

  const PelConfig& config() const noexcept { return cfg_; }

  FeatureGrid<T> embed_patches(const num::Tensor<T>& image) const;
  FeatureGrid<T> pool_and_enhance(const FeatureGrid<T>& grid) const;
  VisionTokenSequence<T> assemble_sequence(const FeatureGrid<T>& pooled) const;
  // The shared feed-forward on its own, [n x width] -> [n x d_model].
  num::Var<T> feed_forward(const num::Var<T>& x) const;

  VisionTokenSequence<T> forward(const num::Tensor<T>& image) const {
    return assemble_sequence(pool_and_enhance(embed_patches(image)));
  }

 private:
  PelConfig cfg_;
  num::Var<T> conv_w_, conv_b_;
  num::MultiHeadAttention<T> ca1_, ca2_;
  num::Var<T> cls_, spl_;
  num::Var<T> ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
};

extern template class PatchEmbedding<float>;
extern template class PatchEmbedding<double>;

}  // namespace eve::vision
