#include "eve/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eve/numerics/rng.hpp"

namespace eve::data {

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names{"circle", "square", "triangle", "diamond"};
  return names;
}

const std::vector<Color>& palette() {
  static const std::vector<Color> colors{
      {"red", 220, 40, 40},     {"green", 40, 170, 60},  {"blue", 40, 80, 220},
      {"yellow", 240, 210, 30}, {"purple", 140, 50, 170}, {"orange", 245, 130, 20},
  };
  return colors;
}

std::vector<std::string> scene_vocabulary() {
  std::vector<std::string> v{"a",     "left", "of",     "what", "color", "is", "the", "shape", "one",
                             "how",   "many", "shapes", "are",  "there", "?",  "1",   "2",     "3"};
  for (const auto& c : palette()) v.push_back(c.name);
  for (const auto& s : shape_names()) v.push_back(s);
  return v;
}

namespace {

const std::string& kind_name(ShapeKind k) { return shape_names()[static_cast<std::size_t>(k)]; }

// Draws k distinct values from [0, n) in random order.
std::vector<std::size_t> distinct(num::Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(n - i)]);
  pool.resize(k);
  return pool;
}

bool inside(ShapeKind kind, double dx, double dy, double r) {
  switch (kind) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare:
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeKind::kTriangle:  // apex up
      return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0;
    case ShapeKind::kDiamond:
      return std::abs(dx) + std::abs(dy) <= r;
  }
  return false;
}

}  // namespace

SceneSpec random_scene(std::uint64_t seed, std::size_t base_edge) {
  num::Rng rng(seed);
  SceneSpec s;
  const double log3 = std::log(3.0);
  const double aspect = std::exp(rng.uniform(-log3, log3));
  const double base = static_cast<double>(base_edge);
  s.height = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(base / std::sqrt(aspect))));
  s.width = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(base * std::sqrt(aspect))));
  s.background = static_cast<std::uint8_t>(200 + rng.below(41));
  const std::size_t n = 1 + rng.below(3);
  const auto kinds = distinct(rng, shape_names().size(), n);
  const auto colors = distinct(rng, palette().size(), n);
  for (std::size_t i = 0; i < n; ++i) s.shapes.push_back({static_cast<ShapeKind>(kinds[i]), colors[i]});
  return s;
}

Image render_scene(const SceneSpec& scene) {
  if (scene.height == 0 || scene.width == 0) throw InputError("render_scene: empty canvas");
  Image img(scene.height, scene.width, scene.background, scene.background, scene.background);
  const double slot = static_cast<double>(scene.width) / static_cast<double>(std::max<std::size_t>(1, scene.shapes.size()));
  const double cy = static_cast<double>(scene.height) / 2.0;
  const double r = 0.35 * std::min(slot, static_cast<double>(scene.height));
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    const SceneShape& sh = scene.shapes[i];
    const Color& c = palette().at(sh.color);
    const double cx = (static_cast<double>(i) + 0.5) * slot;
    for (std::size_t y = 0; y < scene.height; ++y) {
      for (std::size_t x = 0; x < scene.width; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        if (!inside(sh.kind, dx, dy, r)) continue;
        img.at(y, x, 0) = c.r;
        img.at(y, x, 1) = c.g;
        img.at(y, x, 2) = c.b;
      }
    }
  }
  return img;
}

std::string caption_for(const SceneSpec& scene) {
  std::string out;
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    if (i) out += " left of ";
    out += "a " + palette().at(scene.shapes[i].color).name + " " + kind_name(scene.shapes[i].kind);
  }
  return out;
}

std::vector<Turn> qa_for(const SceneSpec& scene, std::uint64_t seed) {
  num::Rng rng(seed);
  std::vector<Turn> turns;
  const std::size_t pairs = 1 + rng.below(2);
  for (std::size_t p = 0; p < pairs; ++p) {
    const SceneShape& sh = scene.shapes[rng.below(scene.shapes.size())];
    switch (rng.below(3)) {
      case 0:
        turns.push_back({"user", "what color is the " + kind_name(sh.kind) + "?"});
        turns.push_back({"assistant", palette().at(sh.color).name});
        break;
      case 1:
        turns.push_back({"user", "what shape is the " + palette().at(sh.color).name + " one?"});
        turns.push_back({"assistant", kind_name(sh.kind)});
        break;
      default:
        turns.push_back({"user", "how many shapes are there?"});
        turns.push_back({"assistant", std::to_string(scene.shapes.size())});
        break;
    }
  }
  return turns;
}

}  // namespace eve::data
