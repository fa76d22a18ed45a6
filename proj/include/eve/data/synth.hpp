#pragma once

// Procedural scenes: 1-3 coloured shapes side by side on a plain background.
// Captions and question/answer turns are derived from the generator
// parameters, never from pixels, so they are correct by construction.

#include <cstdint>
#include <string>
#include <vector>

#include "eve/data/image.hpp"

namespace eve::data {

enum class ShapeKind { kCircle, kSquare, kTriangle, kDiamond };

struct Color {
  std::string name;
  std::uint8_t r = 0, g = 0, b = 0;
};

const std::vector<std::string>& shape_names();
const std::vector<Color>& palette();
// Every word the caption and QA grammars can produce, plus '?'.
std::vector<std::string> scene_vocabulary();

struct SceneShape {
  ShapeKind kind = ShapeKind::kCircle;
  std::size_t color = 0;  // index into palette()
  friend bool operator==(const SceneShape&, const SceneShape&) = default;
};

// Shapes occupy equal-width horizontal slots, left to right in vector order.
struct SceneSpec {
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint8_t background = 220;  // grey level
  std::vector<SceneShape> shapes;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct Turn {
  std::string role;  // "user" | "assistant"
  std::string text;
  friend bool operator==(const Turn&, const Turn&) = default;
};

// Base canvas area is base_edge^2; aspect (w/h) is log-uniform in [1/3, 3].
SceneSpec random_scene(std::uint64_t seed, std::size_t base_edge = 224);
Image render_scene(const SceneSpec& scene);

// "a red circle left of a blue square"
std::string caption_for(const SceneSpec& scene);
// 1-2 question/answer pairs about colour, shape or count.
std::vector<Turn> qa_for(const SceneSpec& scene, std::uint64_t seed);

}  // namespace eve::data
