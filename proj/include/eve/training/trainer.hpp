#pragma once

// Stage driver. Each step accumulates gradients sample by sample:
//   loss = ce_weight * (sum of token CE) / (unmasked tokens in the batch)
//        + mse_weight * (mean of per-sample alignment MSE)
// then clips, takes one AdamW step and appends a metrics record.

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eve/data/dataset.hpp"
#include "eve/teacher/teacher.hpp"
#include "eve/training/checkpoint.hpp"
#include "eve/training/model.hpp"
#include "eve/training/stage.hpp"

namespace eve::train {

class StageOrderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class FreezeAuditError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::filesystem::path last_good)
      : std::runtime_error(what), last_good_checkpoint(std::move(last_good)) {}
  std::filesystem::path last_good_checkpoint;
};

struct TrainState {
  ModelConfig cfg;
  std::unique_ptr<EveModel<float>> model;  // always carries the alignment head
  std::unique_ptr<teacher::TeacherEncoder<float>> teacher;
  std::uint32_t stage_completed = 0;
  std::optional<CheckpointRecord> resume;  // set when restored mid-stage

  static TrainState fresh(const ModelConfig& cfg);
  // Every model and teacher tensor must be present in the record.
  static TrainState from_checkpoint(const ModelConfig& cfg, const CheckpointRecord& ckpt);

  CheckpointRecord to_checkpoint(const std::string& config_text) const;
};

struct TrainerOptions {
  std::filesystem::path out_dir;
  std::string config_text;              // stored verbatim in checkpoints
  std::filesystem::path data_base_dir;  // for relative image paths
  std::filesystem::path teacher_features;  // optional precomputed feature file
  bool force_order = false;
  bool audit = true;
  bool log_wall_time = false;
  std::size_t checkpoint_every = 0;  // mid-stage checkpoints; 0 = none
  std::size_t stop_after = 0;        // end early after this global step (testing resume)
};

struct StepMetrics {
  int stage = 0;
  std::size_t step = 0;
  double ce = 0.0;
  double mse = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct StageResult {
  std::vector<StepMetrics> history;
  std::size_t total_steps = 0;
  bool completed = false;
  std::filesystem::path checkpoint;
};

// Checkpoints land in out_dir as stage<N>.ckpt (complete) or
// stage<N>.partial.ckpt; metrics are appended to out_dir/metrics.jsonl.
StageResult run_stage(const StageSpec& spec, TrainState& state, const data::DatasetManifest& data,
                      const TrainerOptions& opts);

// Teacher features for every record, reading `cache_file` first if it exists.
teacher::FeatureTable teacher_features_for(const teacher::TeacherEncoder<float>& teacher,
                                           const data::DatasetManifest& data,
                                           const std::filesystem::path& base_dir,
                                           const std::filesystem::path& cache_file = {});

// Mean token CE over the supervised positions of a whole manifest.
double evaluate_ce(const EveModel<float>& model, const data::DatasetManifest& data,
                   const std::filesystem::path& base_dir = {}, bool hd_mode = false);

// Mean per-sample alignment MSE over a manifest (model must carry the head).
double evaluate_mse(const EveModel<float>& model, const teacher::TeacherEncoder<float>& teacher,
                    const data::DatasetManifest& data, const std::filesystem::path& base_dir = {});

// Greedy answer to the sample's prompt (caption or first question).
std::string generate_answer(const EveModel<float>& model, const data::Image& image,
                            const std::vector<data::Turn>& conversation, std::size_t max_new);

}  // namespace eve::train
