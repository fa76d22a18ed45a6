#include "eve/cli/commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "eve/cli/flops.hpp"
#include "eve/cli/gradcheck_suite.hpp"
#include "eve/data/binary.hpp"
#include "eve/numerics/kernels.hpp"
#include "eve/training/trainer.hpp"

namespace eve::cli {

namespace fs = std::filesystem;

RunConfig resolve_config(const CommandOptions& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : RunConfig::load(opts.config_path);
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (opts.seed) apply_seed(cfg, *opts.seed);
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;
  if (opts.max_new) cfg.infer_max_new = *opts.max_new;
  try {
    cfg.model.validate();
    for (int s = 1; s <= 3; ++s) cfg.stage_spec(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.simd == "scalar") {
    num::kernels::set_backend(num::kernels::Backend::kScalar);
  } else if (cfg.simd == "avx2") {
    num::kernels::set_backend(num::kernels::Backend::kAvx2);
  } else if (cfg.simd != "auto") {
    throw ConfigError("'simd': expected auto, scalar or avx2, got '" + cfg.simd + "'");
  }
  return cfg;
}

namespace {

void echo_config(const RunConfig& cfg, std::ostream& out) {
  fs::create_directories(cfg.out_dir);
  const std::string text = cfg.to_text();
  std::ofstream(fs::path(cfg.out_dir) / "effective.cfg") << text;
  out << "# effective config (also written to " << (fs::path(cfg.out_dir) / "effective.cfg").string() << ")\n"
      << text;
}

// Config stored in checkpoints. The output location is left out so that
// identical runs written to different directories produce identical bytes.
std::string checkpoint_config(RunConfig cfg) {
  cfg.out_dir.clear();
  return cfg.to_text();
}

struct Dataset {
  data::DatasetManifest manifest;
  fs::path base_dir;
};

Dataset dataset_for_stage(const RunConfig& cfg, int stage) {
  const bool sft = stage == 3;
  const std::string& path = sft ? cfg.data.sft_manifest : cfg.data.caption_manifest;
  if (!path.empty()) return {data::read_manifest(path), fs::path(path).parent_path()};
  return {data::synth_generate(sft ? cfg.data.sft_samples : cfg.data.caption_samples, cfg.data.seed,
                               sft ? "sft" : "caption", cfg.data.base_edge),
          {}};
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const train::StageOrderError& e) {
    err << "refused: " << e.what() << "\n";
    return kOrderRefused;
  } catch (const train::FreezeAuditError& e) {
    err << "freezing audit failed: " << e.what() << "\n";
    return kAuditFailed;
  } catch (const train::DivergenceError& e) {
    err << "aborted: " << e.what() << "; last good checkpoint: " << e.last_good_checkpoint.string() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

double tail_mean(const std::vector<train::StepMetrics>& h, double train::StepMetrics::*field) {
  if (h.empty()) return 0.0;
  const std::size_t k = std::min<std::size_t>(10, h.size());
  double s = 0.0;
  for (std::size_t i = h.size() - k; i < h.size(); ++i) s += h[i].*field;
  return s / static_cast<double>(k);
}

}  // namespace

int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!opts.stage) throw ConfigError("train needs --stage 1|2|3");
    const int stage = *opts.stage;
    const RunConfig cfg = resolve_config(opts);
    const train::StageSpec spec = cfg.stage_spec(stage);
    echo_config(cfg, out);
    const fs::path out_dir = cfg.out_dir;

    train::TrainState state;
    if (!opts.resume.empty()) {
      state = train::TrainState::from_checkpoint(cfg.model, train::load_checkpoint(opts.resume));
    } else if (stage == 1 && opts.checkpoint.empty()) {
      state = train::TrainState::fresh(cfg.model);
    } else {
      const fs::path ckpt = opts.checkpoint.empty() ? out_dir / ("stage" + std::to_string(stage - 1) + ".ckpt")
                                                    : fs::path(opts.checkpoint);
      if (!fs::exists(ckpt)) {
        throw train::StageOrderError("stage " + std::to_string(stage) + " needs the stage " +
                                     std::to_string(stage - 1) + " checkpoint " + ckpt.string() +
                                     ", which does not exist");
      }
      state = train::TrainState::from_checkpoint(cfg.model, train::load_checkpoint(ckpt));
    }

    const Dataset ds = dataset_for_stage(cfg, stage);
    data::write_manifest(out_dir / ("stage" + std::to_string(stage) + "_data.jsonl"), ds.manifest);
    train::TrainerOptions topts;
    topts.out_dir = out_dir;
    topts.config_text = checkpoint_config(cfg);
    topts.data_base_dir = ds.base_dir;
    topts.force_order = opts.force;
    topts.audit = !opts.skip_audit;
    topts.log_wall_time = cfg.log_wall_time;
    topts.checkpoint_every = cfg.checkpoint_every;
    const auto r = train::run_stage(spec, state, ds.manifest, topts);
    char line[256];
    std::snprintf(line, sizeof line, "stage %d: %zu steps, final ce %.6f mse %.6f\n", stage, r.history.size(),
                  r.history.empty() ? 0.0 : r.history.back().ce, r.history.empty() ? 0.0 : r.history.back().mse);
    out << line;
    if (!opts.skip_audit) out << "freezing audit: passed\n";
    out << "checkpoint: " << r.checkpoint.string() << "\n";
    return static_cast<int>(kOk);
  });
}

std::vector<std::string> ablation_sweeps() { return {"pal_on_off", "mse_variant", "interval"}; }

std::string format_ablation_table(const std::string& sweep, const std::vector<AblationRow>& rows) {
  std::string t = "sweep: " + sweep + "\n";
  t += "| arm | interval | layers | variant | lambda | steps | final_ce | final_mse | eval_ce | eval_mse |\n";
  t += "|---|---|---|---|---|---|---|---|---|---|\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %zu | %zu | %s | %g | %zu | %.6f | %.6f | %.6f | %.6f |\n", r.arm.c_str(),
                  r.interval, r.aligned_layers, r.variant.c_str(), r.lambda, r.steps, r.final_ce, r.final_mse,
                  r.eval_ce, r.eval_mse);
    t += buf;
  }
  return t;
}

int cmd_ablate(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::string sweep = opts.sweep.empty() ? "interval" : opts.sweep;
    const auto sweeps = ablation_sweeps();
    if (std::find(sweeps.begin(), sweeps.end(), sweep) == sweeps.end()) {
      throw ConfigError("unknown sweep '" + sweep + "' (pal_on_off|mse_variant|interval)");
    }
    const RunConfig base = resolve_config(opts);
    echo_config(base, out);
    const std::size_t L = base.model.decoder.n_layers;

    struct Arm {
      std::string name;
      RunConfig cfg;
    };
    std::vector<Arm> arms;
    if (sweep == "interval") {
      for (std::size_t k : {2, 4, 8}) {
        if (k >= L) continue;
        RunConfig c = base;
        c.model.pal.interval = k;
        arms.push_back({"interval=" + std::to_string(k), c});
      }
      RunConfig c = base;
      c.model.pal.interval = L;
      arms.push_back({"last", c});
    } else if (sweep == "pal_on_off") {
      arms.push_back({"on", base});
      RunConfig off = base;
      off.model.pal.mse_weight = 0.0;
      for (auto& s : off.stages) s.mse_weight = 0.0;
      arms.push_back({"off", off});
    } else {
      for (auto v : {align::AlignVariant::kPairwise, align::AlignVariant::kNextPatch}) {
        RunConfig c = base;
        c.model.pal.variant = v;
        arms.push_back({align::variant_name(v), c});
      }
    }

    const std::size_t s1 = base.ablate_steps / 2, s2 = base.ablate_steps - s1;
    std::vector<AblationRow> rows;
    for (auto& arm : arms) {
      const fs::path dir = fs::path(base.out_dir) / ("ablate_" + sweep) / arm.name;
      fs::remove_all(dir);
      arm.cfg.stages[0].max_steps = s1;
      arm.cfg.stages[1].max_steps = s2;
      auto state = train::TrainState::fresh(arm.cfg.model);
      const Dataset ds = dataset_for_stage(arm.cfg, 1);
      train::TrainerOptions topts;
      topts.out_dir = dir;
      topts.config_text = checkpoint_config(arm.cfg);
      topts.data_base_dir = ds.base_dir;
      std::vector<train::StepMetrics> history;
      for (int stage : {1, 2}) {
        const auto spec = arm.cfg.stage_spec(stage);
        if (spec.max_steps == 0) continue;
        auto r = train::run_stage(spec, state, ds.manifest, topts);
        history.insert(history.end(), r.history.begin(), r.history.end());
      }
      AblationRow row;
      row.arm = arm.name;
      row.interval = arm.cfg.model.pal.interval;
      row.aligned_layers = state.model->aligner().selected_layers().size();
      row.variant = align::variant_name(arm.cfg.model.pal.variant);
      row.lambda = arm.cfg.stage_spec(2).mse_weight;
      row.steps = history.size();
      row.final_ce = tail_mean(history, &train::StepMetrics::ce);
      row.final_mse = tail_mean(history, &train::StepMetrics::mse);
      row.eval_ce = train::evaluate_ce(*state.model, ds.manifest, ds.base_dir);
      row.eval_mse = train::evaluate_mse(*state.model, *state.teacher, ds.manifest, ds.base_dir);
      rows.push_back(row);
      err << "arm " << arm.name << " done\n";
    }
    const std::string table = format_ablation_table(sweep, rows);
    std::ofstream(fs::path(base.out_dir) / ("ablation_" + sweep + ".md")) << table;
    out << table;
    out << "trends at this scale are reported, not asserted\n";
    return static_cast<int>(kOk);
  });
}

int cmd_flops(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts);
    err << "# effective config\n" << cfg.to_text();
    std::vector<std::string> profiles;
    if (opts.profile) {
      const auto& known = flops_profiles();
      if (std::find(known.begin(), known.end(), *opts.profile) == known.end()) {
        throw ConfigError("unknown profile '" + *opts.profile + "' (toy|eve7b|eve7b_hd|llava15|llava16_hd)");
      }
      profiles.push_back(*opts.profile);
    } else {
      profiles = flops_profiles();
    }
    for (const auto& p : profiles) out << format_report(flops_profile(p, cfg.model)) << "\n";
    const auto ratio = [&](const char* enc, const char* free) {
      const double a = flops_profile(enc, cfg.model).vision_total(), b = flops_profile(free, cfg.model).vision_total();
      char buf[160];
      std::snprintf(buf, sizeof buf, "vision-part ratio %s / %s = %.3f\n", enc, free, a / b);
      out << buf;
    };
    ratio("llava15", "eve7b");
    ratio("llava16_hd", "eve7b_hd");

    if (std::find(profiles.begin(), profiles.end(), "toy") != profiles.end()) {
      // Wall-clock of the toy model on this machine; not comparable to any
      // published latency.
      train::EveModel<float> model(cfg.model, false);
      data::SceneSpec scene = data::random_scene(cfg.data.seed);
      scene.height = 336;
      scene.width = 448;
      vision::PelConfig pel = cfg.model.pel;
      pel.max_edge = 448;
      const auto image = vision::preprocess_image(data::render_scene(scene), pel);
      num::NoGradGuard no_grad;
      const auto t0 = std::chrono::steady_clock::now();
      const auto vision = model.pel().forward(image);
      const auto t1 = std::chrono::steady_clock::now();
      const std::vector<int> text(16, data::ToyTokenizer::kBos);
      if (vision.layout.total_len + text.size() <= cfg.model.decoder.max_seq_len) {
        model.decoder().forward(vision, text);
      }
      const auto t2 = std::chrono::steady_clock::now();
      char buf[200];
      std::snprintf(buf, sizeof buf,
                    "toy wall-clock on this machine (not comparable to published hardware): vision %.6f s, LLM %.6f s\n",
                    std::chrono::duration<double>(t1 - t0).count(), std::chrono::duration<double>(t2 - t1).count());
      out << buf;
    }
    return static_cast<int>(kOk);
  });
}

int cmd_gradcheck(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts);
    echo_config(cfg, out);
    GradcheckSuiteOptions g;
    g.seed = cfg.model.seed;
    g.mse_weight = cfg.model.pal.mse_weight;
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_gradcheck_suite(cfg.model, g);
    bool ok = true;
    char buf[320];
    for (const auto& c : results) {
      const bool pass = c.result.max_rel_error < 1e-4;
      ok = ok && pass;
      std::snprintf(buf, sizeof buf, "%-8s max_rel_err %.3e over %zu entries (worst %s[%zu]: analytic %.6e numeric %.6e) %s\n",
                    c.name.c_str(), c.result.max_rel_error, c.result.entries_checked, c.result.worst_tensor.c_str(),
                    c.result.worst_index, c.result.worst_analytic, c.result.worst_numeric, pass ? "ok" : "FAIL");
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "elapsed %.2f s\n",
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    out << buf;
    return static_cast<int>(ok ? kOk : kThresholdExceeded);
  });
}

int cmd_infer(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = resolve_config(opts);
    const fs::path ckpt_path = opts.checkpoint.empty() ? fs::path(cfg.out_dir) / "stage3.ckpt" : fs::path(opts.checkpoint);
    if (!fs::exists(ckpt_path)) throw std::runtime_error("checkpoint " + ckpt_path.string() + " does not exist");
    const auto ckpt = train::load_checkpoint(ckpt_path);
    // The model shape comes from the checkpoint; only the generation budget
    // is taken from the command line.
    RunConfig trained = RunConfig::parse(ckpt.config_text);
    trained.infer_max_new = cfg.infer_max_new;
    err << "# effective config\n" << trained.to_text();
    train::EveModel<float> model(trained.model, false);
    model.load(ckpt.tensors, true);

    data::Image image;
    std::vector<data::Turn> conv;
    if (!opts.sample.empty()) {
      bool found = false;
      for (int stage : {1, 3}) {
        const Dataset ds = dataset_for_stage(trained, stage);
        for (const auto& s : ds.manifest.records) {
          if (s.id != opts.sample) continue;
          image = data::load_image(s, ds.base_dir);
          found = true;
        }
      }
      if (!found) throw std::runtime_error("no sample '" + opts.sample + "' in the configured datasets");
    } else if (!opts.image.empty()) {
      image = data::read_ppm(opts.image);
    } else {
      throw ConfigError("infer needs --image PATH or --sample ID");
    }
    if (!opts.prompt.empty()) conv.push_back({"user", opts.prompt});
    conv.push_back({"assistant", ""});
    out << train::generate_answer(model, image, conv, trained.infer_max_new) << "\n";
    return static_cast<int>(kOk);
  });
}

}  // namespace eve::cli
