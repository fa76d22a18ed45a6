#include "eve/cli/gradcheck_suite.hpp"

#include "eve/data/synth.hpp"
#include "eve/numerics/rng.hpp"
#include "eve/teacher/teacher.hpp"

namespace eve::cli {

using num::Tensor;
using num::Var;

namespace {

std::vector<num::NamedTensor> params_in(num::ParamStore<double>& store, const std::vector<std::string>& groups) {
  std::vector<num::NamedTensor> out;
  for (auto& [name, var] : store.entries()) {
    const auto g = train::param_group(name);
    if (std::find(groups.begin(), groups.end(), g) != groups.end()) out.push_back({name, var});
  }
  return out;
}

Tensor<double> random_tensor(num::Shape shape, num::Rng& rng, double sd = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.span()) v = rng.normal(0.0, sd);
  return t;
}

}  // namespace

std::vector<GradcheckComponent> run_gradcheck_suite(const train::ModelConfig& cfg, const GradcheckSuiteOptions& o) {
  train::EveModel<double> model(cfg, true);
  auto& store = model.params();
  num::Rng rng(o.seed);

  data::SceneSpec scene = data::random_scene(o.seed);
  scene.height = scene.width = cfg.pel.max_edge;
  const data::Image raw = data::render_scene(scene);
  const Tensor<double> image = vision::preprocess_image(raw, cfg.pel).cast<double>();
  const teacher::TeacherEncoder<double> teacher(cfg.teacher);
  const auto tf = teacher.encode(teacher::teacher_preprocess(raw, cfg.teacher.resolution).cast<double>());
  const Tensor<double> teacher_grid = tf.grid.cast<double>();

  const std::size_t vocab = cfg.decoder.vocab_size, n_text = o.text_tokens;
  std::vector<int> text(n_text);
  for (auto& t : text) t = static_cast<int>(rng.below(vocab));

  num::GradCheckOptions gc;
  gc.max_entries_per_tensor = o.entries_per_tensor;
  gc.seed = o.seed;
  std::vector<GradcheckComponent> out;

  // Vision layout and a fixed prefix shared by the decoder-only and PAL-only paths.
  const auto vision0 = model.pel().forward(image);
  const auto layout = vision0.layout;
  const std::size_t span = layout.total_len, len = span + n_text;
  std::vector<int> labels(len, 0);
  std::vector<std::uint8_t> mask(len, 0);
  for (std::size_t i = span - 1; i + 1 < len; ++i) {
    labels[i] = text[i + 1 - span];
    mask[i] = 1;
  }
  const Tensor<double> prefix = random_tensor(vision0.tokens.shape(), rng, 0.5);
  const auto& pal = model.aligner();

  {
    const Tensor<double> readout = random_tensor(vision0.tokens.shape(), rng);
    auto f = [&] { return num::sum(num::mul(model.pel().forward(image).tokens, num::constant(readout))); };
    out.push_back({"pel", num::grad_check(f, params_in(store, {"pel"}), gc)});
  }
  {
    auto f = [&] {
      const auto r = model.decoder().forward(num::constant(prefix), text);
      return align::ce_text_loss(r.logits, labels, mask);
    };
    out.push_back({"decoder", num::grad_check(f, params_in(store, {"decoder"}), gc)});
  }
  {
    decoder::HiddenStatesTap<double> tap;
    for (std::size_t l = 0; l < cfg.decoder.n_layers; ++l)
      tap.per_layer.push_back(num::constant(random_tensor({len, cfg.decoder.d_model}, rng)));
    auto f = [&] {
      const auto s = pal.aggregate(tap, layout, tf.h_t, tf.w_t);
      return align::mse_alignment_loss(s, pal.project_teacher(teacher_grid), cfg.pal.variant);
    };
    out.push_back({"pal", num::grad_check(f, params_in(store, {"pal"}), gc)});
  }
  {
    Var<double> logits(random_tensor({len, vocab}, rng, 2.0), true);
    auto f = [&] { return align::ce_text_loss(logits, labels, mask); };
    out.push_back({"ce", num::grad_check(f, {{"logits", logits}}, {})});
  }
  {
    const std::size_t n = tf.h_t * tf.w_t, dm = cfg.decoder.d_model;
    Var<double> student(random_tensor({n, dm}, rng), true);
    const auto target = num::l2_normalize_rows(num::constant(random_tensor({n, dm}, rng)));
    auto f = [&] { return align::mse_alignment_loss(num::l2_normalize_rows(student), target, cfg.pal.variant); };
    out.push_back({"mse", num::grad_check(f, {{"student", student}}, {})});
  }
  {
    auto f = [&] {
      const auto r = model.forward(image, text);
      const auto ce = align::ce_text_loss(r.logits, labels, mask);
      const auto s = pal.aggregate(r.tap, layout, tf.h_t, tf.w_t);
      const auto mse = align::mse_alignment_loss(s, pal.project_teacher(teacher_grid), cfg.pal.variant);
      return align::total_loss(ce, mse, o.mse_weight);
    };
    out.push_back({"full", num::grad_check(f, params_in(store, {"pel", "decoder", "pal"}), gc)});
  }
  return out;
}

}  // namespace eve::cli
