#pragma once

// Entry points behind `eve {train|ablate|flops|gradcheck|infer}`. Each
// returns a process exit status and writes human-readable output to `out`,
// diagnostics to `err`.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eve/cli/run_config.hpp"

namespace eve::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kOrderRefused = 3,
  kAuditFailed = 4,
  kDiverged = 5,
  kThresholdExceeded = 6,
};

struct CommandOptions {
  std::string config_path;  // empty: built-in defaults
  std::optional<int> stage;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> profile;
  std::optional<std::size_t> max_new;
  std::vector<std::string> overrides;  // "key=value", applied after the file
  bool force = false;                  // ignore stage ordering
  bool skip_audit = false;
  std::string resume;      // partial checkpoint to continue
  std::string checkpoint;  // input checkpoint (train stages 2-3, infer)
  std::string image;       // infer: PPM path
  std::string sample;      // infer: manifest sample id instead of an image
  std::string prompt;      // infer: question; empty = caption
  std::string sweep;       // ablate
};

// Config file + --seed/--out/--set overrides, validated.
RunConfig resolve_config(const CommandOptions& opts);

int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_ablate(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_flops(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_infer(const CommandOptions& opts, std::ostream& out, std::ostream& err);

// One ablation arm's outcome.
struct AblationRow {
  std::string arm;
  std::size_t interval = 0;
  std::size_t aligned_layers = 0;
  std::string variant;
  double lambda = 0.0;
  std::size_t steps = 0;
  double final_ce = 0.0;   // mean of the last 10 logged steps
  double final_mse = 0.0;  // mean of the last 10 logged steps
  double eval_ce = 0.0;
  double eval_mse = 0.0;
};
std::vector<std::string> ablation_sweeps();
std::string format_ablation_table(const std::string& sweep, const std::vector<AblationRow>& rows);

}  // namespace eve::cli
