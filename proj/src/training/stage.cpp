#include "eve/training/stage.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace eve::train {

StageSpec build_stage(int stage_id, const StageOverrides& o) {
  StageSpec s;
  s.stage_id = stage_id;
  switch (stage_id) {
    case 1:
      s.trainable = {"pel", "pal"};
      s.lr_max = 4e-4;
      s.warmup_ratio = 0.03;
      s.paper_batch_size = 512;
      s.n_samples = 16'000'000;
      s.batch_size = 8;
      break;
    case 2:
      s.trainable = {"pel", "pal", "decoder"};
      s.lr_max = 4e-5;
      s.warmup_ratio = 0.01;
      s.paper_batch_size = 512;
      s.n_samples = 33'000'000;
      s.batch_size = 8;
      break;
    case 3:
      s.trainable = {"pel", "pal", "decoder"};
      s.lr_max = 2e-5;
      s.warmup_ratio = 0.01;
      s.paper_batch_size = 128;
      s.n_samples = 665'000;
      s.batch_size = 4;
      break;
    default:
      throw std::invalid_argument("unknown stage " + std::to_string(stage_id) + " (expected 1, 2 or 3)");
  }
  if (o.lr_max) s.lr_max = *o.lr_max;
  if (o.warmup_ratio) s.warmup_ratio = *o.warmup_ratio;
  if (o.weight_decay) s.weight_decay = *o.weight_decay;
  if (o.clip_norm) s.clip_norm = *o.clip_norm;
  if (o.ce_weight) s.ce_weight = *o.ce_weight;
  if (o.mse_weight) s.mse_weight = *o.mse_weight;
  if (o.batch_size) s.batch_size = *o.batch_size;
  if (o.epochs) s.epochs = *o.epochs;
  if (o.max_steps) s.max_steps = *o.max_steps;
  if (o.hd_mode) s.hd_mode = *o.hd_mode;
  if (o.dataset) s.dataset = *o.dataset;

  if (s.hd_mode && stage_id != 3) throw std::invalid_argument("hd_mode applies to stage 3 only");
  if (s.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(s.lr_max >= 0.0)) throw std::invalid_argument("lr_max must be >= 0");
  if (!(s.warmup_ratio >= 0.0 && s.warmup_ratio <= 1.0)) throw std::invalid_argument("warmup_ratio must be in [0, 1]");
  if (!(s.clip_norm >= 0.0)) throw std::invalid_argument("clip_norm must be >= 0");
  if (!(s.ce_weight >= 0.0) || !(s.mse_weight >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
  return s;
}

double lr_at(std::size_t step, std::size_t total_steps, const StageSpec& spec) {
  if (step > total_steps) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
  }
  const auto warmup = static_cast<std::size_t>(std::ceil(spec.warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) return spec.lr_max * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return spec.lr_max;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return spec.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace eve::train
