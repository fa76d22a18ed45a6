#include "eve/vision/patch_embedding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace eve::vision {

using num::ShapeError;

void PelConfig::validate() const {
  if (conv_stride < 1) throw std::invalid_argument("pel: conv_stride must be >= 1");
  if (pool_stride < 1) throw std::invalid_argument("pel: pool_stride must be >= 1");
  if (heads < 1 || width() % heads != 0) {
    throw std::invalid_argument("pel: width " + std::to_string(width()) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (d_model < 1) throw std::invalid_argument("pel: d_model must be >= 1");
  if (max_edge < unit()) {
    throw std::invalid_argument("pel: max_edge " + std::to_string(max_edge) +
                                " is smaller than one patch unit " + std::to_string(unit()));
  }
}

PatchLayout PatchLayout::for_grid(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("patch layout needs a non-empty grid");
  PatchLayout l;
  l.h = h;
  l.w = w;
  l.cls_index = 0;
  l.total_len = 1 + h * (w + 1);
  l.spl_indices.reserve(h);
  for (std::size_t r = 0; r < h; ++r) l.spl_indices.push_back(1 + r * (w + 1) + w);
  return l;
}

std::vector<std::size_t> PatchLayout::patch_positions() const {
  std::vector<std::size_t> out;
  out.reserve(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out.push_back(position_of(r, c));
  return out;
}

ImageExtent conforming_extent(std::size_t height, std::size_t width, const PelConfig& cfg) {
  if (height == 0 || width == 0) throw data::InputError("image has a zero-sized side");
  const double longest = static_cast<double>(std::max(height, width));
  const double s = std::min(1.0, static_cast<double>(cfg.max_edge) / longest);
  auto side = [&](std::size_t v) {
    const auto scaled = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(v * s)));
    const std::size_t u = cfg.unit();
    return std::max(u, (scaled / u) * u);
  };
  return {side(height), side(width)};
}

num::Tensor<float> preprocess_image(const data::Image& raw, const PelConfig& cfg) {
  const ImageExtent e = conforming_extent(raw.height, raw.width, cfg);
  return data::resize_to_tensor(raw, e.height, e.width);
}

template <class T>
PatchEmbedding<T>::PatchEmbedding(const PelConfig& cfg, num::ParamStore<T>& store, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t c = cfg_.width();
  const std::size_t d = cfg_.d_model;
  const std::size_t k = cfg_.conv_stride;
  const double conv_std = 1.0 / std::sqrt(3.0 * static_cast<double>(k * k));
  const double c_std = 1.0 / std::sqrt(static_cast<double>(c));
  conv_w_ = num::add_normal(store, "pel.conv.weight", {c, 3, k, k}, conv_std, seed);
  conv_b_ = num::add_filled(store, "pel.conv.bias", {c}, T{0});
  ca1_ = num::MultiHeadAttention<T>::create(store, "pel.ca1", c, cfg_.heads, seed, c_std);
  ca2_ = num::MultiHeadAttention<T>::create(store, "pel.ca2", c, cfg_.heads, seed, c_std);
  cls_ = num::add_normal(store, "pel.cls", {1, c}, 1.0, seed);
  spl_ = num::add_normal(store, "pel.spl", {1, c}, 1.0, seed);
  ffn_w1_ = num::add_normal(store, "pel.ffn.w1", {d, c}, c_std, seed);
  ffn_b1_ = num::add_filled(store, "pel.ffn.b1", {d}, T{0});
  ffn_w2_ = num::add_normal(store, "pel.ffn.w2", {d, d}, 1.0 / std::sqrt(static_cast<double>(d)), seed);
  ffn_b2_ = num::add_filled(store, "pel.ffn.b2", {d}, T{0});
}

template <class T>
FeatureGrid<T> PatchEmbedding<T>::embed_patches(const num::Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("embed_patches: expected a 3 x H x W image, got " + num::to_string(image.shape()));
  }
  const std::size_t k = cfg_.conv_stride;
  FeatureGrid<T> g;
  g.cells = num::conv2d_patchify(image, conv_w_, conv_b_, k);
  g.h = image.dim(1) / k;
  g.w = image.dim(2) / k;
  return g;
}

template <class T>
FeatureGrid<T> PatchEmbedding<T>::pool_and_enhance(const FeatureGrid<T>& grid) const {
  const std::size_t s = cfg_.pool_stride;
  FeatureGrid<T> out;
  const num::Var<T> pooled = num::avg_pool2d(grid.cells, grid.h, grid.w, s);
  out.h = grid.h / s;
  out.w = grid.w / s;
  // Each pooled cell attends to exactly the s*s cells it was averaged from.
  std::vector<std::vector<std::size_t>> slices(out.h * out.w);
  for (std::size_t r = 0; r < out.h; ++r)
    for (std::size_t c = 0; c < out.w; ++c) {
      auto& keys = slices[r * out.w + c];
      for (std::size_t dy = 0; dy < s; ++dy)
        for (std::size_t dx = 0; dx < s; ++dx) keys.push_back((r * s + dy) * grid.w + c * s + dx);
    }
  const auto key_sets = num::KeySets::from_lists(slices, grid.h * grid.w);
  out.cells = num::add(pooled, ca1_.forward(pooled, grid.cells, key_sets));
  return out;
}

template <class T>
num::Var<T> PatchEmbedding<T>::feed_forward(const num::Var<T>& x) const {
  return num::linear(num::silu(num::linear(x, ffn_w1_, ffn_b1_)), ffn_w2_, ffn_b2_);
}

template <class T>
VisionTokenSequence<T> PatchEmbedding<T>::assemble_sequence(const FeatureGrid<T>& pooled) const {
  const std::size_t n = pooled.h * pooled.w;
  if (pooled.cells.dim(0) != n) {
    throw ShapeError("assemble_sequence: grid holds " + std::to_string(pooled.cells.dim(0)) +
                     " cells, expected " + std::to_string(n));
  }
  const num::Var<T> cls_feat = ca2_.forward(cls_, pooled.cells, num::KeySets::full(1, n));

  // Stack [cls, spl, cells...] once, then lay tokens out with one gather.
  const std::vector<num::Var<T>> parts{cls_feat, spl_, pooled.cells};
  const num::Var<T> stacked = num::concat_rows<T>(parts);
  VisionTokenSequence<T> seq;
  seq.layout = PatchLayout::for_grid(pooled.h, pooled.w);
  std::vector<std::size_t> order(seq.layout.total_len, 1);  // default: <SPL>
  order[seq.layout.cls_index] = 0;
  for (std::size_t r = 0; r < pooled.h; ++r)
    for (std::size_t c = 0; c < pooled.w; ++c) order[seq.layout.position_of(r, c)] = 2 + r * pooled.w + c;
  seq.tokens = feed_forward(num::gather_rows<T>(stacked, order));
  return seq;
}

template class PatchEmbedding<float>;
template class PatchEmbedding<double>;

}  // namespace eve::vision
