#include "eve/training/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "eve/numerics/rng.hpp"

namespace eve::train {

namespace fs = std::filesystem;
using num::Var;

TrainState TrainState::fresh(const ModelConfig& cfg) {
  TrainState s;
  s.cfg = cfg;
  s.model = std::make_unique<EveModel<float>>(cfg, true);
  s.teacher = std::make_unique<teacher::TeacherEncoder<float>>(cfg.teacher);
  return s;
}

TrainState TrainState::from_checkpoint(const ModelConfig& cfg, const CheckpointRecord& ckpt) {
  TrainState s;
  s.cfg = cfg;
  s.model = std::make_unique<EveModel<float>>(cfg, true);
  s.model->load(ckpt.tensors, true);
  std::map<std::string, num::Tensor<float>> teacher_tensors;
  for (const auto& [name, t] : ckpt.tensors)
    if (param_group(name) == "teacher") teacher_tensors.emplace(name, t);
  s.teacher = std::make_unique<teacher::TeacherEncoder<float>>(cfg.teacher, teacher_tensors);
  if (ckpt.stage_complete) {
    s.stage_completed = ckpt.stage;
  } else {
    s.stage_completed = ckpt.stage > 0 ? ckpt.stage - 1 : 0;
    s.resume = ckpt;
  }
  return s;
}

CheckpointRecord TrainState::to_checkpoint(const std::string& config_text) const {
  CheckpointRecord c;
  c.config_text = config_text;
  c.stage = stage_completed;
  c.stage_complete = true;
  snapshot_params(model->params(), c.tensors);
  snapshot_params(teacher->params(), c.tensors);
  return c;
}

teacher::FeatureTable teacher_features_for(const teacher::TeacherEncoder<float>& teacher,
                                           const data::DatasetManifest& data, const fs::path& base_dir,
                                           const fs::path& cache_file) {
  teacher::FeatureTable cached;
  if (!cache_file.empty() && fs::exists(cache_file)) cached = teacher::read_feature_file(cache_file);
  teacher::FeatureTable out;
  const std::size_t R = teacher.config().resolution;
  for (const auto& s : data.records) {
    auto it = cached.find(s.id);
    if (it != cached.end()) {
      out.emplace(s.id, it->second);
      continue;
    }
    out.emplace(s.id, teacher.encode(teacher::teacher_preprocess(data::load_image(s, base_dir), R)));
  }
  return out;
}

namespace {

struct PreparedSample {
  num::Tensor<float> image;
  vision::PatchLayout layout;
  std::vector<int> text;
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;
  std::size_t supervised = 0;
};

PreparedSample prepare(const data::Sample& s, const data::ToyTokenizer& tok, const vision::PelConfig& pel,
                       const fs::path& base_dir) {
  auto b = data::collate({s}, tok, pel, base_dir);
  PreparedSample p;
  p.image = std::move(b.images[0]);
  p.layout = b.layouts[0];
  p.text = std::move(b.text_ids[0]);
  p.labels = std::move(b.labels[0]);
  p.mask = std::move(b.loss_mask[0]);
  for (auto m : p.mask) p.supervised += m;
  return p;
}

vision::PelConfig stage_pel(const ModelConfig& cfg, bool hd_mode) {
  vision::PelConfig pel = cfg.pel;
  if (hd_mode) pel.max_edge *= 2;
  return pel;
}

std::vector<std::size_t> shuffled(std::size_t n, num::Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::map<std::string, num::Tensor<float>> frozen_snapshot(const TrainState& state, const StageSpec& spec) {
  std::map<std::string, num::Tensor<float>> snap;
  for (const auto& [name, var] : state.model->params().entries())
    if (!spec.is_trainable(param_group(name))) snap.emplace(name, var.value());
  snapshot_params(state.teacher->params(), snap);
  return snap;
}

void audit_frozen(const std::map<std::string, num::Tensor<float>>& before, const TrainState& state,
                  const StageSpec& spec) {
  const auto after = frozen_snapshot(state, spec);
  std::string changed;
  for (const auto& [name, t] : before) {
    auto it = after.find(name);
    if (it == after.end() || std::memcmp(t.data(), it->second.data(), t.size() * sizeof(float)) != 0) {
      changed += (changed.empty() ? "" : ", ") + name;
    }
  }
  if (!changed.empty()) {
    throw FreezeAuditError("stage " + std::to_string(spec.stage_id) + " modified frozen parameters: " + changed);
  }
}

void check_order(const StageSpec& spec, const TrainState& state, bool force) {
  if (force) return;
  if (state.resume) {
    if (state.resume->stage != static_cast<std::uint32_t>(spec.stage_id)) {
      throw StageOrderError("checkpoint is a partial stage " + std::to_string(state.resume->stage) +
                            " run; cannot continue it as stage " + std::to_string(spec.stage_id));
    }
    return;
  }
  const auto expected = static_cast<std::uint32_t>(spec.stage_id - 1);
  if (state.stage_completed != expected) {
    throw StageOrderError("stage " + std::to_string(spec.stage_id) + " needs a checkpoint from stage " +
                          std::to_string(expected) + ", got one from stage " +
                          std::to_string(state.stage_completed) + " (use --force to override)");
  }
}

std::string metrics_line(const StepMetrics& m, bool wall, double seconds) {
  nlohmann::ordered_json j{{"stage", m.stage}, {"step", m.step}, {"ce", m.ce},       {"mse", m.mse},
                           {"total", m.total}, {"lr", m.lr},     {"grad_norm", m.grad_norm}};
  if (wall) j["wall_time"] = seconds;
  return j.dump() + "\n";
}

}  // namespace

StageResult run_stage(const StageSpec& spec, TrainState& state, const data::DatasetManifest& data,
                      const TrainerOptions& opts) {
  check_order(spec, state, opts.force_order);
  if (data.records.empty()) throw std::invalid_argument("run_stage: empty dataset");
  auto& model = *state.model;
  auto& params = model.params();
  const data::ToyTokenizer tok;
  if (tok.vocab_size() > state.cfg.decoder.vocab_size) {
    throw std::invalid_argument("decoder vocab_size " + std::to_string(state.cfg.decoder.vocab_size) +
                                " is smaller than the tokenizer's " + std::to_string(tok.vocab_size()));
  }
  fs::create_directories(opts.out_dir);

  std::set<std::string> trainable;
  for (auto& [name, var] : params.entries()) {
    const bool on = spec.is_trainable(param_group(name));
    var.set_requires_grad(on);
    if (on) trainable.insert(name);
  }
  const auto frozen_before = opts.audit ? frozen_snapshot(state, spec) : decltype(frozen_snapshot(state, spec)){};

  const vision::PelConfig pel = stage_pel(state.cfg, spec.hd_mode);
  std::vector<PreparedSample> prepared;
  for (const auto& s : data.records) prepared.push_back(prepare(s, tok, pel, opts.data_base_dir));
  teacher::FeatureTable feats;
  const bool use_pal = spec.mse_weight > 0.0;
  if (use_pal) {
    const fs::path cache = opts.teacher_features.empty() ? opts.out_dir / "teacher_features.bin" : opts.teacher_features;
    feats = teacher_features_for(*state.teacher, data, opts.data_base_dir, cache);
    teacher::write_feature_file(opts.out_dir / "teacher_features.bin", feats);
  }

  const std::size_t n = data.records.size();
  const std::size_t per_epoch = (n + spec.batch_size - 1) / spec.batch_size;
  StageResult result;
  result.total_steps = spec.max_steps ? spec.max_steps : spec.epochs * per_epoch;

  OptimizerState opt;
  num::Rng rng(num::derive_seed(state.cfg.seed, "data/stage" + std::to_string(spec.stage_id)));
  std::size_t step = 0;
  if (state.resume) {
    opt = state.resume->optimizer;
    rng.set_state(state.resume->rng_state);
    step = state.resume->step;
    if (opt.m.size() != trainable.size()) {
      throw StageOrderError("resumed optimizer state does not match the stage's trainable set");
    }
  } else {
    opt = init_optimizer(params, trainable);
  }
  // rng state at the start of the epoch whose permutation is `order`
  std::string epoch_rng_state = rng.state();
  std::vector<std::size_t> order = shuffled(n, rng);
  std::size_t drawn_epoch = step / per_epoch;

  const auto metrics_path = opts.out_dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw std::runtime_error("cannot open " + metrics_path.string());
  const auto t0 = std::chrono::steady_clock::now();
  const std::string tag = "stage" + std::to_string(spec.stage_id);

  auto checkpoint = [&](bool complete, std::size_t at_step, const fs::path& path) {
    CheckpointRecord c;
    c.config_text = opts.config_text;
    c.stage = static_cast<std::uint32_t>(spec.stage_id);
    c.stage_complete = complete;
    c.step = complete ? 0 : at_step;
    if (!complete) {
      c.rng_state = at_step / per_epoch == drawn_epoch ? epoch_rng_state : rng.state();
      c.optimizer = opt;
    }
    snapshot_params(params, c.tensors);
    snapshot_params(state.teacher->params(), c.tensors);
    save_checkpoint(path, c);
  };
  auto diverge = [&](const std::string& why) -> DivergenceError {
    const fs::path p = opts.out_dir / (tag + ".last_good.ckpt");
    params.zero_grad();
    checkpoint(false, step, p);
    return DivergenceError("stage " + std::to_string(spec.stage_id) + " diverged at step " +
                               std::to_string(step + 1) + ": " + why,
                           p);
  };

  while (step < result.total_steps) {
    const std::size_t epoch = step / per_epoch, slot = step % per_epoch;
    if (epoch != drawn_epoch) {
      epoch_rng_state = rng.state();
      order = shuffled(n, rng);
      drawn_epoch = epoch;
    }
    const std::size_t begin = slot * spec.batch_size, end = std::min(n, begin + spec.batch_size);
    std::size_t supervised = 0;
    for (std::size_t i = begin; i < end; ++i) supervised += prepared[order[i]].supervised;
    if (spec.ce_weight > 0.0 && supervised == 0) throw std::invalid_argument("run_stage: batch has no supervised tokens");

    StepMetrics m;
    m.stage = spec.stage_id;
    m.step = step + 1;
    params.zero_grad();
    const double batch = static_cast<double>(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const PreparedSample& ps = prepared[order[i]];
      const std::size_t len = ps.layout.total_len + ps.text.size();
      const auto out = model.forward(ps.image, ps.text);
      const auto ce_sum = num::cross_entropy_sum(out.logits, std::span(ps.labels.data(), len),
                                                 std::span(ps.mask.data(), len));
      Var<float> loss = num::scale(ce_sum, static_cast<float>(spec.ce_weight / std::max<std::size_t>(supervised, 1)));
      m.ce += num::item(ce_sum) / static_cast<double>(std::max<std::size_t>(supervised, 1));
      if (use_pal) {
        const auto& f = feats.at(data.records[order[i]].id);
        const auto& pal = model.aligner();
        const auto student = pal.aggregate(out.tap, ps.layout, f.h_t, f.w_t);
        const auto target = pal.project_teacher(f.grid);
        const auto mse = align::mse_alignment_loss(student, target, pal.config().variant);
        m.mse += num::item(mse) / batch;
        loss = align::total_loss(loss, num::scale(mse, static_cast<float>(1.0 / batch)), spec.mse_weight);
      }
      if (!std::isfinite(num::item(loss))) throw diverge("non-finite loss");
      num::backward(loss);
    }
    m.total = spec.ce_weight * m.ce + spec.mse_weight * m.mse;
    m.grad_norm = clip_grad_norm(params, opt, spec.clip_norm);
    m.lr = lr_at(step + 1, result.total_steps, spec);
    if (!std::isfinite(m.grad_norm)) throw diverge("non-finite gradient norm");
    try {
      adamw_step(params, opt, m.lr, AdamWConfig{.weight_decay = spec.weight_decay});
    } catch (const NonFiniteGradient& e) {
      throw diverge(e.what());
    }
    ++step;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics << metrics_line(m, opts.log_wall_time, seconds);
    result.history.push_back(m);

    if (step < result.total_steps) {
      const bool periodic = opts.checkpoint_every && step % opts.checkpoint_every == 0;
      const bool stopping = opts.stop_after && step >= opts.stop_after;
      if (periodic || stopping) checkpoint(false, step, opts.out_dir / (tag + ".partial.ckpt"));
      if (stopping) {
        params.zero_grad();
        metrics.flush();
        result.checkpoint = opts.out_dir / (tag + ".partial.ckpt");
        return result;
      }
    }
  }
  params.zero_grad();
  metrics.flush();

  if (opts.audit) audit_frozen(frozen_before, state, spec);
  state.stage_completed = static_cast<std::uint32_t>(spec.stage_id);
  state.resume.reset();
  result.completed = true;
  result.checkpoint = opts.out_dir / (tag + ".ckpt");
  checkpoint(true, 0, result.checkpoint);
  return result;
}

double evaluate_ce(const EveModel<float>& model, const data::DatasetManifest& data, const fs::path& base_dir,
                   bool hd_mode) {
  num::NoGradGuard no_grad;
  const data::ToyTokenizer tok;
  const vision::PelConfig pel = stage_pel(model.config(), hd_mode);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : data.records) {
    const PreparedSample ps = prepare(s, tok, pel, base_dir);
    const std::size_t len = ps.layout.total_len + ps.text.size();
    const auto out = model.forward(ps.image, ps.text);
    total += num::item(num::cross_entropy_sum(out.logits, std::span(ps.labels.data(), len),
                                              std::span(ps.mask.data(), len)));
    count += ps.supervised;
  }
  if (count == 0) throw std::invalid_argument("evaluate_ce: no supervised tokens");
  return total / static_cast<double>(count);
}

double evaluate_mse(const EveModel<float>& model, const teacher::TeacherEncoder<float>& teacher,
                    const data::DatasetManifest& data, const fs::path& base_dir) {
  num::NoGradGuard no_grad;
  const auto feats = teacher_features_for(teacher, data, base_dir);
  const auto& pal = model.aligner();
  double total = 0.0;
  for (const auto& s : data.records) {
    vision::PatchLayout layout;
    const auto out = model.forward(vision::preprocess_image(data::load_image(s, base_dir), model.config().pel), {}, &layout);
    const auto& f = feats.at(s.id);
    const auto student = pal.aggregate(out.tap, layout, f.h_t, f.w_t);
    total += num::item(align::mse_alignment_loss(student, pal.project_teacher(f.grid), pal.config().variant));
  }
  return total / static_cast<double>(data.records.size());
}

std::string generate_answer(const EveModel<float>& model, const data::Image& image,
                            const std::vector<data::Turn>& conversation, std::size_t max_new) {
  num::NoGradGuard no_grad;
  const data::ToyTokenizer tok;
  const auto vision = model.pel().forward(vision::preprocess_image(image, model.config().pel));
  const auto prompt = data::prompt_for(conversation, tok);
  const auto ids = model.decoder().generate(vision.tokens, prompt, max_new, data::ToyTokenizer::kEos);
  return tok.detokenize(ids);
}

}  // namespace eve::train
