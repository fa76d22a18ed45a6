#include "eve/cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

namespace eve::cli {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::string doc;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <class T>
Field num_field(std::string key, std::string doc, T& ref) {
  return {key, std::move(doc), [&ref] { return fmt(ref); },
          [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }};
}

Field size_field(std::string key, std::string doc, std::size_t& ref) { return num_field<std::size_t>(std::move(key), std::move(doc), ref); }
Field seed_field(std::string key, std::string doc, std::uint64_t& ref) {
  return {key, std::move(doc), [&ref] { return std::to_string(ref); },
          [&ref, key](const std::string& v) { ref = parse_number<std::uint64_t>(key, v); }};
}
Field real_field(std::string key, std::string doc, double& ref) { return num_field<double>(std::move(key), std::move(doc), ref); }
Field bool_field(std::string key, std::string doc, bool& ref) {
  return {key, std::move(doc), [&ref] { return fmt(ref); },
          [&ref, key](const std::string& v) { ref = parse_bool(key, v); }};
}
Field str_field(std::string key, std::string doc, std::string& ref) {
  return {key, std::move(doc), [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

// Stage overrides print the effective value, so the echo is self-contained.
template <class T, class Get>
Field stage_field(std::string key, std::string doc, const RunConfig& cfg, int stage, std::optional<T>& ref, Get effective) {
  return {key, std::move(doc),
          [&cfg, stage, effective] { return fmt(effective(cfg.stage_spec(stage))); },
          [&ref, key](const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) {
              ref = parse_bool(key, v);
            } else {
              ref = parse_number<T>(key, v);
            }
          }};
}

std::vector<Field> fields(RunConfig& c) {
  auto& m = c.model;
  std::vector<Field> f{
      seed_field("seed", "model initialisation seed", m.seed),
      size_field("d_model", "decoder and vision-token width", m.decoder.d_model),
      size_field("n_layers", "decoder blocks", m.decoder.n_layers),
      size_field("n_heads", "decoder attention heads", m.decoder.n_heads),
      real_field("ffn_mult", "decoder feed-forward width / d_model", m.decoder.ffn_mult),
      size_field("vocab_size", "decoder vocabulary (>= tokenizer size)", m.decoder.vocab_size),
      real_field("rope_base", "rotary frequency base", m.decoder.rope_base),
      size_field("max_seq_len", "longest vision+text sequence", m.decoder.max_seq_len),
      size_field("pel.conv_stride", "patchify kernel and stride", m.pel.conv_stride),
      size_field("pel.pool_stride", "slice pooling stride", m.pel.pool_stride),
      size_field("pel.heads", "heads of the two patch-embedding cross-attentions", m.pel.heads),
      size_field("pel.dim", "internal patch-embedding width, 0 = d_model", m.pel.pel_dim),
      size_field("max_edge", "longest image side after resizing", m.pel.max_edge),
      size_field("teacher.resolution", "teacher input side", m.teacher.resolution),
      size_field("teacher.patch", "teacher patch size", m.teacher.patch),
      size_field("teacher.dim", "teacher feature width", m.teacher.d_t),
      size_field("teacher.layers", "teacher blocks", m.teacher.n_layers_t),
      size_field("teacher.heads", "teacher attention heads", m.teacher.heads),
      size_field("teacher.mlp_mult", "teacher MLP width / dim", m.teacher.mlp_mult),
      seed_field("teacher.seed", "teacher initialisation seed", m.teacher.seed),
      size_field("pal.interval", "decoder-layer stride feeding the alignment head", m.pal.interval),
      {"pal.variant", "pairwise | next_patch", [&m] { return align::variant_name(m.pal.variant); },
       [&m](const std::string& v) {
         try {
           m.pal.variant = align::parse_variant(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(std::string("'pal.variant': ") + e.what());
         }
       }},
      size_field("pal.heads", "heads of the cross-layer attention", m.pal.heads),
      real_field("pal.mse_weight", "default alignment loss weight (lambda)", m.pal.mse_weight),
      size_field("data.caption_samples", "synthetic caption pairs (stages 1-2)", c.data.caption_samples),
      size_field("data.sft_samples", "synthetic QA samples (stage 3)", c.data.sft_samples),
      seed_field("data.seed", "dataset generation seed", c.data.seed),
      size_field("data.base_edge", "synthetic canvas area is base_edge^2", c.data.base_edge),
      str_field("data.caption_manifest", "caption manifest path, empty = synthetic", c.data.caption_manifest),
      str_field("data.sft_manifest", "QA manifest path, empty = synthetic", c.data.sft_manifest),
      str_field("out_dir", "output directory", c.out_dir),
      bool_field("log_wall_time", "add wall-clock seconds to metrics (breaks byte-identical logs)", c.log_wall_time),
      size_field("checkpoint_every", "mid-stage checkpoint interval in steps, 0 = off", c.checkpoint_every),
      str_field("simd", "auto | scalar | avx2", c.simd),
      size_field("ablate.steps", "training budget per ablation arm", c.ablate_steps),
      size_field("infer.max_new", "default generation budget", c.infer_max_new),
  };
  for (int s = 1; s <= 3; ++s) {
    auto& o = c.stages[static_cast<std::size_t>(s - 1)];
    const std::string p = "stage" + std::to_string(s) + ".";
    f.push_back(stage_field<double>(p + "lr", "peak learning rate", c, s, o.lr_max, [](const train::StageSpec& x) { return x.lr_max; }));
    f.push_back(stage_field<double>(p + "warmup", "warmup fraction of the stage", c, s, o.warmup_ratio, [](const train::StageSpec& x) { return x.warmup_ratio; }));
    f.push_back(stage_field<std::size_t>(p + "batch", "samples per step", c, s, o.batch_size, [](const train::StageSpec& x) { return x.batch_size; }));
    f.push_back(stage_field<std::size_t>(p + "epochs", "passes over the data", c, s, o.epochs, [](const train::StageSpec& x) { return x.epochs; }));
    f.push_back(stage_field<std::size_t>(p + "max_steps", "step budget, 0 = epochs", c, s, o.max_steps, [](const train::StageSpec& x) { return x.max_steps; }));
    f.push_back(stage_field<double>(p + "weight_decay", "decoupled weight decay", c, s, o.weight_decay, [](const train::StageSpec& x) { return x.weight_decay; }));
    f.push_back(stage_field<double>(p + "clip_norm", "global gradient-norm clip, 0 = off", c, s, o.clip_norm, [](const train::StageSpec& x) { return x.clip_norm; }));
    f.push_back(stage_field<double>(p + "ce_weight", "text loss weight", c, s, o.ce_weight, [](const train::StageSpec& x) { return x.ce_weight; }));
    f.push_back(stage_field<double>(p + "mse_weight", "alignment loss weight, default pal.mse_weight", c, s, o.mse_weight, [](const train::StageSpec& x) { return x.mse_weight; }));
    if (s == 3) {
      f.push_back(stage_field<bool>(p + "hd_mode", "double max_edge for this stage", c, s, o.hd_mode, [](const train::StageSpec& x) { return x.hd_mode; }));
    }
  }
  return f;
}

}  // namespace

RunConfig::RunConfig() {
  model.decoder.d_model = 64;
  model.decoder.n_layers = 4;
  model.decoder.n_heads = 4;
  model.decoder.vocab_size = 320;
  model.decoder.max_seq_len = 512;
  model.pel.d_model = 64;
  model.pel.heads = 4;
  model.pel.max_edge = 112;
  model.teacher.resolution = 112;
  model.teacher.d_t = 64;
  model.pal.interval = 2;
  model.pal.heads = 4;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& f : fields(*this)) {
    if (f.key == key) {
      f.set(value);
      model.pel.d_model = model.decoder.d_model;
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

train::StageSpec RunConfig::stage_spec(int stage) const {
  if (stage < 1 || stage > 3) throw ConfigError("unknown stage " + std::to_string(stage));
  train::StageOverrides o = stages[static_cast<std::size_t>(stage - 1)];
  if (!o.mse_weight) o.mse_weight = model.pal.mse_weight;
  return train::build_stage(stage, o);
}

std::string RunConfig::to_text() const {
  auto& self = const_cast<RunConfig&>(*this);
  std::string out;
  for (const auto& f : fields(self)) out += f.key + " = " + f.get() + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' repeated");
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  try {
    cfg.model.validate();
    for (int s = 1; s <= 3; ++s) cfg.stage_spec(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string RunConfig::describe() {
  RunConfig defaults;
  std::string out;
  for (const auto& f : fields(defaults)) out += f.key + " = " + f.get() + "    # " + f.doc + "\n";
  return out;
}

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.model.seed = seed;
  cfg.data.seed = seed;
}

}  // namespace eve::cli
