#pragma once

// Frozen, seeded toy ViT that supplies patch-level supervision targets.
// Fixed square resolution, learned absolute position embeddings, pre-LN
// blocks; final patch tokens are l2-normalised with <CLS> dropped.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "eve/data/image.hpp"
#include "eve/numerics/layers.hpp"

namespace eve::teacher {

struct TeacherConfig {
  std::size_t resolution = 112;
  std::size_t patch = 14;
  std::size_t d_t = 64;
  std::size_t n_layers_t = 2;
  std::size_t heads = 4;
  std::size_t mlp_mult = 4;
  std::uint64_t seed = 7;

  std::size_t grid() const noexcept { return resolution / patch; }
  void validate() const;
};

struct TeacherFeatures {
  num::Tensor<float> grid;  // [h_t*w_t x d_t], row-major over (row, col)
  std::size_t h_t = 0;
  std::size_t w_t = 0;

  std::size_t d_t() const { return grid.dim(1); }
};

// Pads the short side with the per-image mean colour (centred), then
// resamples to resolution x resolution. Returns 3 x R x R in [-1, 1].
num::Tensor<float> teacher_preprocess(const data::Image& raw, std::size_t resolution);

template <class T>
class TeacherEncoder {
 public:
  explicit TeacherEncoder(const TeacherConfig& cfg);
  // Rebuilds from saved tensors (names "teacher.*"); shapes must match cfg.
  TeacherEncoder(const TeacherConfig& cfg, const std::map<std::string, num::Tensor<T>>& tensors);

  const TeacherConfig& config() const noexcept { return cfg_; }
  const num::ParamStore<T>& params() const noexcept { return store_; }

  // image: 3 x R x R from teacher_preprocess.
  TeacherFeatures encode(const num::Tensor<T>& image) const;

 private:
  void bind();

  TeacherConfig cfg_;
  num::ParamStore<T> store_;
  struct Block {
    num::Var<T> ln1_w, ln1_b, ln2_w, ln2_b;
    num::MultiHeadAttention<T> attn;
    num::Var<T> fc1_w, fc1_b, fc2_w, fc2_b;
  };
  num::Var<T> patch_w_, patch_b_, cls_, pos_, lnf_w_, lnf_b_;
  std::vector<Block> blocks_;
};

extern template class TeacherEncoder<float>;
extern template class TeacherEncoder<double>;

// Teacher-feature file. Little-endian throughout:
//   magic "EVETF001" (8 bytes), u32 record count, then per record
//   u32 id length, id bytes (UTF-8), u32 h_t, u32 w_t, u32 d_t,
//   h_t*w_t*d_t IEEE-754 binary32 values in row-major (row, col, channel).
using FeatureTable = std::map<std::string, TeacherFeatures>;
void write_feature_file(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_feature_file(const std::filesystem::path& path);

}  // namespace eve::teacher
