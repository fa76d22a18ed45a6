#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "eve/data/binary.hpp"
#include "eve/training/trainer.hpp"

using namespace eve;
using namespace eve::train;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.seed = 4;
  c.pel.heads = 2;
  c.pel.d_model = 16;
  c.pel.max_edge = 56;
  c.decoder.d_model = 16;
  c.decoder.n_layers = 3;  // two shallower layers, so CA3 mixes more than one key
  c.decoder.n_heads = 2;
  c.decoder.vocab_size = 300;
  c.decoder.max_seq_len = 128;
  c.teacher.resolution = 28;
  c.teacher.d_t = 8;
  c.teacher.n_layers_t = 1;
  c.teacher.heads = 2;
  c.pal.interval = 1;
  c.pal.heads = 2;
  return c;
}

StageSpec tiny_stage(int id) {
  StageOverrides o;
  o.batch_size = 2;
  o.epochs = 3;
  o.lr_max = 1e-3;
  return build_stage(id, o);
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("eve_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  const auto b = data::read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("stage defaults carry the reference recipe") {
  const auto s1 = build_stage(1), s2 = build_stage(2), s3 = build_stage(3);
  CHECK(s1.lr_max == 4e-4);
  CHECK(s2.lr_max == 4e-5);
  CHECK(s3.lr_max == 2e-5);
  CHECK(s1.warmup_ratio == 0.03);
  CHECK(s2.warmup_ratio == 0.01);
  CHECK(s3.warmup_ratio == 0.01);
  CHECK(s1.paper_batch_size == 512);
  CHECK(s2.paper_batch_size == 512);
  CHECK(s3.paper_batch_size == 128);
  CHECK(s1.n_samples == 16'000'000);
  CHECK(s2.n_samples == 33'000'000);
  CHECK(s3.n_samples == 665'000);
  CHECK(s1.weight_decay == 0.0);
  CHECK(s1.trainable == std::set<std::string>{"pel", "pal"});
  CHECK(s2.trainable == std::set<std::string>{"pel", "pal", "decoder"});
  CHECK_FALSE(s3.is_trainable("teacher"));
  StageOverrides hd;
  hd.hd_mode = true;
  CHECK_THROWS_AS(build_stage(1, hd), std::invalid_argument);
  CHECK(build_stage(3, hd).hd_mode);
  CHECK_THROWS_AS(build_stage(4), std::invalid_argument);
}

TEST_CASE("learning rate warms up linearly then follows a half cosine") {
  StageSpec s;
  s.lr_max = 2.0;
  s.warmup_ratio = 0.1;
  const std::size_t total = 95;  // warmup = ceil(9.5) = 10
  CHECK(lr_at(0, total, s) == 0.0);
  CHECK(lr_at(5, total, s) == doctest::Approx(1.0));
  CHECK(lr_at(10, total, s) == doctest::Approx(2.0));
  for (std::size_t t = 10; t <= total; ++t) {
    const double expect = 1.0 + std::cos(std::numbers::pi * (t - 10) / 85.0);
    CHECK(lr_at(t, total, s) == doctest::Approx(expect));
  }
  CHECK(lr_at(total, total, s) == doctest::Approx(0.0));
  CHECK_THROWS(lr_at(total + 1, total, s));
}

TEST_CASE("adamw matches a hand-computed two-step update") {
  num::ParamStore<float> store;
  auto p = store.add("w", num::Tensor<float>({1}, 1.0f));
  store.get("w").set_requires_grad(true);
  auto state = init_optimizer(store, {"w"});
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  double x = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? 0.5 : -0.25;
    p.mutable_grad()[0] = static_cast<float>(g);
    adamw_step(store, state, 0.01, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1 - std::pow(0.9, t)), vhat = v / (1 - std::pow(0.999, t));
    x -= 0.01 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.1 * x);
    CHECK(p.value()[0] == doctest::Approx(x).epsilon(1e-6));
  }
  CHECK(state.step == 2);
}

TEST_CASE("adamw leaves untracked parameters alone and rejects non-finite gradients") {
  num::ParamStore<float> store;
  auto a = store.add("a", num::Tensor<float>({2}, 1.0f));
  auto b = store.add("b", num::Tensor<float>({2}, 1.0f));
  auto state = init_optimizer(store, {"a"});
  a.mutable_grad().fill(1.0f);
  b.mutable_grad().fill(1.0f);
  adamw_step(store, state, 0.1);
  CHECK(b.value()[0] == 1.0f);
  CHECK(a.value()[0] < 1.0f);
  const float before = a.value()[0];
  a.mutable_grad()[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(adamw_step(store, state, 0.1), NonFiniteGradient);
  CHECK(a.value()[0] == before);
  CHECK(state.step == 1);
}

TEST_CASE("gradient clipping rescales to the maximum norm") {
  num::ParamStore<float> store;
  auto a = store.add("a", num::Tensor<float>({2}));
  auto state = init_optimizer(store, {"a"});
  a.mutable_grad()[0] = 3.0f;
  a.mutable_grad()[1] = 4.0f;
  CHECK(grad_norm(store, state) == doctest::Approx(5.0));
  CHECK(clip_grad_norm(store, state, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(a.grad()[1] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(store, state, 10.0) == doctest::Approx(1.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("checkpoints round-trip byte for byte") {
  CheckpointRecord c;
  c.config_text = "seed = 1\n";
  c.stage = 2;
  c.step = 17;
  c.rng_state = "12345";
  c.tensors["b"] = num::Tensor<float>({2, 3}, 0.5f);
  c.tensors["a"] = num::Tensor<float>({4}, -1.25f);
  c.optimizer.step = 17;
  c.optimizer.m["a"] = {0.1, 0.2, 0.3, 0.4};
  c.optimizer.v["a"] = {1, 2, 3, 4};
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  CHECK(back == c);
  CHECK(encode_checkpoint(back) == bytes);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), data::FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), data::FormatError);
}

TEST_CASE("stages must run in order unless forced") {
  auto state = TrainState::fresh(tiny_model());
  const auto data = data::synth_generate(4, 3, "caption", 56);
  TrainerOptions opts;
  opts.out_dir = fresh_dir("order");
  CHECK_THROWS_AS(run_stage(tiny_stage(2), state, data, opts), StageOrderError);
  CHECK_THROWS_AS(run_stage(tiny_stage(3), state, data, opts), StageOrderError);
  opts.force_order = true;
  CHECK(run_stage(tiny_stage(2), state, data, opts).completed);
  fs::remove_all(opts.out_dir);
}

TEST_CASE("stage 1 trains only the patch embedding and alignment head") {
  auto state = TrainState::fresh(tiny_model());
  const auto data = data::synth_generate(4, 3, "caption", 56);
  std::map<std::string, num::Tensor<float>> before;
  snapshot_params(state.model->params(), before);
  TrainerOptions opts;
  opts.out_dir = fresh_dir("freeze");
  const auto r = run_stage(tiny_stage(1), state, data, opts);
  CHECK(r.completed);
  CHECK(r.history.size() == 6);
  for (const auto& [name, var] : state.model->params().entries()) {
    CAPTURE(name);
    const bool same = var.value() == before.at(name);
    CHECK(same == (param_group(name) == "decoder"));
  }
  CHECK(fs::exists(opts.out_dir / "stage1.ckpt"));
  CHECK(load_checkpoint(opts.out_dir / "stage1.ckpt").stage_complete);
  fs::remove_all(opts.out_dir);
}

TEST_CASE("an interrupted stage resumes to the same bytes") {
  const auto cfg = tiny_model();
  const auto data = data::synth_generate(5, 3, "caption", 56);
  const auto spec = tiny_stage(1);  // 3 steps per epoch, 9 in total

  TrainerOptions a;
  a.out_dir = fresh_dir("resume_a");
  a.config_text = "x";
  auto sa = TrainState::fresh(cfg);
  run_stage(spec, sa, data, a);

  for (std::size_t stop : {3u, 4u}) {
    CAPTURE(stop);
    TrainerOptions b = a;
    b.out_dir = fresh_dir("resume_b");
    b.stop_after = stop;
    auto sb = TrainState::fresh(cfg);
    const auto partial = run_stage(spec, sb, data, b);
    CHECK_FALSE(partial.completed);
    auto resumed = TrainState::from_checkpoint(cfg, load_checkpoint(partial.checkpoint));
    b.stop_after = 0;
    const auto rest = run_stage(spec, resumed, data, b);
    CHECK(rest.completed);
    CHECK(rest.history.size() == 9 - stop);
    CHECK(slurp(a.out_dir / "stage1.ckpt") == slurp(b.out_dir / "stage1.ckpt"));
    CHECK(slurp(a.out_dir / "metrics.jsonl") == slurp(b.out_dir / "metrics.jsonl"));
    fs::remove_all(b.out_dir);
  }
  fs::remove_all(a.out_dir);
}

TEST_CASE("divergence stops the stage and leaves a checkpoint behind") {
  auto state = TrainState::fresh(tiny_model());
  const auto data = data::synth_generate(4, 3, "caption", 56);
  StageOverrides o;
  o.batch_size = 2;
  o.epochs = 5;
  o.lr_max = 1e30;
  o.warmup_ratio = 0.0;
  o.clip_norm = 0.0;
  TrainerOptions opts;
  opts.out_dir = fresh_dir("diverge");
  try {
    run_stage(build_stage(1, o), state, data, opts);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(fs::exists(e.last_good_checkpoint));
    CHECK_FALSE(load_checkpoint(e.last_good_checkpoint).stage_complete);
  }
  fs::remove_all(opts.out_dir);
}

TEST_CASE("parameter groups") {
  CHECK(param_group("pel.conv.weight") == "pel");
  CHECK(param_group("decoder.blocks.0.attn.wq") == "decoder");
  CHECK(param_group("pal.ca3.wq") == "pal");
  CHECK(param_group("teacher.cls") == "teacher");
}

}  // TEST_SUITE
