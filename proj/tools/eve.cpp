#include <iostream>

#include <CLI11.hpp>

#include "eve/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace eve::cli;
  CLI::App app{"eve: encoder-free vision-language toy trainer"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  CommandOptions o;
  int stage = 0;
  std::uint64_t seed = 0;
  std::string out, profile;
  std::size_t max_new = 0;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config_path, "Run config file (key = value)")->check(CLI::ExistingFile);
    c->add_option("--seed", seed, "Seed for model init and data generation");
    c->add_option("--out", out, "Output directory");
    c->add_option("--set", o.overrides, "Extra key=value config overrides");
  };

  auto* train = app.add_subcommand("train", "Run one training stage");
  common(train);
  train->add_option("--stage", stage, "Stage 1, 2 or 3")->required()->check(CLI::Range(1, 3));
  train->add_option("--checkpoint", o.checkpoint, "Previous-stage checkpoint (default OUT/stage<N-1>.ckpt)");
  train->add_option("--resume", o.resume, "Continue a partial checkpoint");
  train->add_flag("--force", o.force, "Ignore stage ordering");
  train->add_flag("--skip-audit", o.skip_audit, "Skip the freezing audit");

  auto* ablate = app.add_subcommand("ablate", "Train ablation arms and compare");
  common(ablate);
  ablate->add_option("--sweep", o.sweep, "pal_on_off | mse_variant | interval")->default_str("interval");

  auto* flops = app.add_subcommand("flops", "Analytic FLOPs breakdown");
  common(flops);
  flops->add_option("--profile", profile, "toy | eve7b | eve7b_hd | llava15 | llava16_hd (default: all)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check in double precision");
  common(grad);

  auto* infer = app.add_subcommand("infer", "Greedy generation from a checkpoint");
  common(infer);
  infer->add_option("--checkpoint", o.checkpoint, "Checkpoint (default OUT/stage3.ckpt)");
  infer->add_option("--image", o.image, "PPM image");
  infer->add_option("--sample", o.sample, "Sample id from the configured datasets");
  infer->add_option("--prompt", o.prompt, "Question; omit for a caption");
  infer->add_option("--max-new", max_new, "Maximum generated tokens");

  CLI11_PARSE(app, argc, argv);

  auto* cmd = app.get_subcommands().front();
  if (cmd->count("--seed")) o.seed = seed;
  if (cmd->count("--out")) o.out_dir = out;
  if (cmd == train) o.stage = stage;
  if (cmd == flops && cmd->count("--profile")) o.profile = profile;
  if (cmd == infer && cmd->count("--max-new")) o.max_new = max_new;

  if (cmd == train) return cmd_train(o, std::cout, std::cerr);
  if (cmd == ablate) return cmd_ablate(o, std::cout, std::cerr);
  if (cmd == flops) return cmd_flops(o, std::cout, std::cerr);
  if (cmd == grad) return cmd_gradcheck(o, std::cout, std::cerr);
  return cmd_infer(o, std::cout, std::cerr);
}
