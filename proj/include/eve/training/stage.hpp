#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>

namespace eve::train {

// Reference recipe at full scale. Desk runs keep lr/warmup and shrink batch
// and sample counts.
struct StageSpec {
  int stage_id = 1;
  std::set<std::string> trainable;  // parameter groups, see param_group()
  double lr_max = 0.0;
  double warmup_ratio = 0.0;
  std::size_t batch_size = 1;
  std::size_t n_samples = 0;        // full-scale sample budget, informational
  std::size_t paper_batch_size = 0;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;        // 0: epochs * ceil(data / batch)
  double weight_decay = 0.0;
  double clip_norm = 1.0;           // 0 disables clipping
  double ce_weight = 1.0;
  double mse_weight = 1.0;
  bool hd_mode = false;             // doubles max_edge; stage 3 only
  std::string dataset;              // manifest path

  bool is_trainable(const std::string& group) const { return trainable.count(group) != 0; }
};

struct StageOverrides {
  std::optional<double> lr_max, warmup_ratio, weight_decay, clip_norm, ce_weight, mse_weight;
  std::optional<std::size_t> batch_size, epochs, max_steps;
  std::optional<bool> hd_mode;
  std::optional<std::string> dataset;
};

// Stage defaults with desk-scale batch sizes (8 / 8 / 4); overrides applied
// last. Throws std::invalid_argument for an unknown stage or hd_mode outside
// stage 3.
StageSpec build_stage(int stage_id, const StageOverrides& overrides = {});

// Linear warmup from 0 over ceil(warmup_ratio * total) steps, then cosine
// decay to 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, const StageSpec& spec);

}  // namespace eve::train
