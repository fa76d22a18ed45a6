#pragma once

// Checkpoint file, little-endian throughout:
//   magic "EVECKPT\0" (8 bytes), u32 version
//   str config text                (u32 length + bytes)
//   u32 stage, u8 stage_complete, u64 step within stage
//   str rng state
//   u32 tensor count, per tensor: str name, u32 rank, u64 dims..., f32 values
//   u64 optimizer step, u32 moment count,
//     per moment: str name, u64 length, f64 m..., f64 v...
// Tensors and moments are written in name order, so save -> load -> save is
// byte-identical.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "eve/numerics/autograd.hpp"
#include "eve/training/optimizer.hpp"

namespace eve::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::uint32_t stage = 0;
  bool stage_complete = false;
  std::uint64_t step = 0;
  std::string rng_state;
  std::map<std::string, num::Tensor<float>> tensors;
  OptimizerState optimizer;

  friend bool operator==(const CheckpointRecord&, const CheckpointRecord&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointRecord& c);
CheckpointRecord decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const CheckpointRecord& c);
CheckpointRecord load_checkpoint(const std::filesystem::path& path);

// Copies every tensor of `store` into `out` (overwriting same names).
void snapshot_params(const num::ParamStore<float>& store, std::map<std::string, num::Tensor<float>>& out);

}  // namespace eve::train
