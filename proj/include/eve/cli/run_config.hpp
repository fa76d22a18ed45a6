#pragma once

// Line-oriented run configuration:
//
//   # comment
//   key = value
//
// Unknown keys, malformed lines and repeated keys are rejected with the line
// number. Every key and its default is listed by RunConfig::describe().

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "eve/training/model.hpp"
#include "eve/training/stage.hpp"

namespace eve::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::size_t caption_samples = 16;
  std::size_t sft_samples = 8;
  std::uint64_t seed = 1234;
  std::size_t base_edge = 224;
  std::string caption_manifest;  // optional; overrides the synthetic caption set
  std::string sft_manifest;      // optional; overrides the synthetic QA set
};

struct RunConfig {
  train::ModelConfig model;
  DataConfig data;
  std::array<train::StageOverrides, 3> stages;  // index = stage - 1
  std::string out_dir = "runs/default";
  bool log_wall_time = false;
  std::size_t checkpoint_every = 0;
  std::string simd = "auto";  // auto | scalar | avx2
  std::size_t ablate_steps = 500;
  std::size_t infer_max_new = 32;

  RunConfig();

  // Applies `key = value`; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  // Effective configuration in the same format, every key present, in a
  // fixed order. parse(to_text()) reproduces this config.
  std::string to_text() const;
  train::StageSpec stage_spec(int stage) const;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  static std::string describe();
};

// Sets the model and data seeds; the teacher keeps its own seed.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

}  // namespace eve::cli
