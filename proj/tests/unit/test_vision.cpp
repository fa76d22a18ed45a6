#include <doctest.h>

#include "eve/numerics/rng.hpp"
#include "eve/vision/patch_embedding.hpp"

using namespace eve;
using vision::PatchLayout;
using vision::PelConfig;

namespace {

PelConfig small_pel() {
  PelConfig c;
  c.heads = 2;
  c.d_model = 16;
  c.max_edge = 112;
  return c;
}

num::Tensor<double> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  num::Rng rng(seed);
  num::Tensor<double> img({3, h, w});
  for (auto& v : img.span()) v = rng.uniform(-1.0, 1.0);
  return img;
}

}  // namespace

TEST_SUITE("vision") {

TEST_CASE("layout places one separator after every row") {
  const auto l = PatchLayout::for_grid(3, 4);
  CHECK(l.total_len == 1 + 3 * 5);
  CHECK(l.cls_index == 0);
  CHECK(l.spl_indices == std::vector<std::size_t>{5, 10, 15});
  const auto pos = l.patch_positions();
  CHECK(pos.size() == 12);
  CHECK(pos.front() == 1);
  CHECK(pos[4] == 6);  // row 1 starts after the first separator
  CHECK(pos.back() == 14);
}

TEST_CASE("conforming extent downscales, floors to the unit and never upscales") {
  const auto c = small_pel();  // unit 28, max edge 112
  CHECK(vision::conforming_extent(224, 224, c) == vision::ImageExtent{112, 112});
  CHECK(vision::conforming_extent(300, 100, c) == vision::ImageExtent{112, 28});
  CHECK(vision::conforming_extent(60, 90, c) == vision::ImageExtent{56, 84});
  CHECK(vision::conforming_extent(10, 40, c) == vision::ImageExtent{28, 28});
  CHECK_THROWS(vision::conforming_extent(0, 40, c));
}

TEST_CASE("patch embedding produces the documented sequence") {
  num::ParamStore<double> store;
  const vision::PatchEmbedding<double> pel(small_pel(), store, 3);
  const auto img = random_image(56, 84, 1);
  const auto grid = pel.embed_patches(img);
  CHECK(grid.h == 4);
  CHECK(grid.w == 6);
  const auto pooled = pel.pool_and_enhance(grid);
  CHECK(pooled.h == 2);
  CHECK(pooled.w == 3);
  const auto seq = pel.forward(img);
  CHECK(seq.layout.total_len == 1 + 2 * 4);
  CHECK(seq.tokens.shape() == num::Shape{9, 16});
  // The separator is one shared vector and the feed-forward is per token.
  const auto& t = seq.tokens.value();
  for (std::size_t c = 0; c < 16; ++c) CHECK(t.at(4, c) == t.at(8, c));
  CHECK_THROWS(pel.embed_patches(random_image(50, 84, 1)));
}

TEST_CASE("patch embedding has no absolute position dependence in the pooled cells") {
  // Two identical halves side by side give identical pooled cells.
  num::ParamStore<double> store;
  const vision::PatchEmbedding<double> pel(small_pel(), store, 4);
  auto img = random_image(28, 56, 2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 28; ++y)
      for (std::size_t x = 0; x < 28; ++x) img[(c * 28 + y) * 56 + x + 28] = img[(c * 28 + y) * 56 + x];
  const auto pooled = pel.pool_and_enhance(pel.embed_patches(img));
  const auto& v = pooled.cells.value();
  for (std::size_t c = 0; c < v.cols(); ++c) CHECK(v.at(0, c) == doctest::Approx(v.at(1, c)).epsilon(1e-12));
}

TEST_CASE("preprocessing maps pixels to [-1, 1] at the conforming extent") {
  data::Image raw(90, 60, 255, 0, 128);
  const auto t = vision::preprocess_image(raw, small_pel());
  CHECK(t.shape() == num::Shape{3, 84, 56});
  CHECK(t[0] == doctest::Approx(1.0));
  CHECK(t[84 * 56] == doctest::Approx(-1.0));
  CHECK(t[2 * 84 * 56] == doctest::Approx(128.0 / 127.5 - 1.0));
}

}  // TEST_SUITE
