#include "eve/data/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "eve/data/binary.hpp"
#include "eve/numerics/rng.hpp"

namespace eve::data {

using nlohmann::json;

void Sample::validate() const {
  if (id.empty()) throw InputError("sample without id");
  if (scene.has_value() == !image_path.empty()) {
    throw InputError("sample '" + id + "': needs exactly one of scene or image path");
  }
  bool assistant = false;
  for (const Turn& t : conversation) {
    if (t.role != "user" && t.role != "assistant") {
      throw InputError("sample '" + id + "': unknown role '" + t.role + "'");
    }
    assistant = assistant || t.role == "assistant";
  }
  if (!assistant) throw InputError("sample '" + id + "': conversation has no assistant turn");
}

DatasetManifest synth_generate(std::size_t n, std::uint64_t seed, const std::string& split,
                               std::size_t base_edge) {
  if (n == 0) throw std::invalid_argument("synth_generate: n must be >= 1");
  if (split != "caption" && split != "sft") {
    throw std::invalid_argument("synth_generate: unknown split '" + split + "' (caption|sft)");
  }
  DatasetManifest m;
  m.split = split;
  m.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s-%05zu", split.c_str(), i);
    Sample s;
    s.id = id;
    s.scene = random_scene(num::derive_seed(seed, s.id), base_edge);
    if (split == "caption") {
      s.conversation = {{"assistant", caption_for(*s.scene)}};
    } else {
      s.conversation = qa_for(*s.scene, num::derive_seed(seed, s.id + "/qa"));
    }
    m.records.push_back(std::move(s));
  }
  return m;
}

namespace {

json scene_to_json(const SceneSpec& s) {
  json shapes = json::array();
  for (const auto& sh : s.shapes) {
    shapes.push_back({{"kind", shape_names()[static_cast<std::size_t>(sh.kind)]},
                      {"color", palette().at(sh.color).name}});
  }
  return {{"height", s.height}, {"width", s.width}, {"background", s.background}, {"shapes", shapes}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.background = j.at("background").get<std::uint8_t>();
  for (const auto& sh : j.at("shapes")) {
    SceneShape shape;
    const auto kind = sh.at("kind").get<std::string>();
    const auto color = sh.at("color").get<std::string>();
    const auto& kinds = shape_names();
    auto k = std::find(kinds.begin(), kinds.end(), kind);
    if (k == kinds.end()) throw InputError("manifest: unknown shape '" + kind + "'");
    shape.kind = static_cast<ShapeKind>(k - kinds.begin());
    const auto& pal = palette();
    auto c = std::find_if(pal.begin(), pal.end(), [&](const Color& x) { return x.name == color; });
    if (c == pal.end()) throw InputError("manifest: unknown color '" + color + "'");
    shape.color = static_cast<std::size_t>(c - pal.begin());
    s.shapes.push_back(shape);
  }
  return s;
}

}  // namespace

std::string manifest_to_jsonl(const DatasetManifest& m) {
  std::string out = json{{"format", "eve-manifest-1"}, {"split", m.split}, {"seed", m.seed}}.dump() + "\n";
  for (const Sample& s : m.records) {
    json conv = json::array();
    for (const Turn& t : s.conversation) conv.push_back({{"role", t.role}, {"text", t.text}});
    json rec{{"id", s.id}, {"conversation", conv}};
    if (s.scene) {
      rec["scene"] = scene_to_json(*s.scene);
    } else {
      rec["image"] = s.image_path;
    }
    out += rec.dump() + "\n";
  }
  return out;
}

DatasetManifest manifest_from_jsonl(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw InputError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("format")) {
      m.split = j.value("split", "");
      m.seed = j.value("seed", std::uint64_t{0});
      continue;
    }
    try {
      Sample s;
      s.id = j.at("id").get<std::string>();
      if (j.contains("scene")) s.scene = scene_from_json(j.at("scene"));
      if (j.contains("image")) s.image_path = j.at("image").get<std::string>();
      for (const auto& t : j.at("conversation")) {
        s.conversation.push_back({t.at("role").get<std::string>(), t.at("text").get<std::string>()});
      }
      s.validate();
      m.records.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw InputError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::vector<std::string> ids;
  for (const auto& s : m.records) ids.push_back(s.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw InputError("manifest: duplicate record id '" + *std::adjacent_find(ids.begin(), ids.end()) + "'");
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  const std::string text = manifest_to_jsonl(m);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_jsonl(ss.str());
}

Image load_image(const Sample& s, const std::filesystem::path& base_dir) {
  if (s.scene) return render_scene(*s.scene);
  const std::filesystem::path p(s.image_path);
  return read_ppm(p.is_absolute() || base_dir.empty() ? p : base_dir / p);
}

namespace {

void append(EncodedText& e, const std::vector<int>& ids, std::uint8_t sup) {
  e.ids.insert(e.ids.end(), ids.begin(), ids.end());
  e.supervised.insert(e.supervised.end(), ids.size(), sup);
}

bool has_user_turn(const std::vector<Turn>& turns) {
  for (const Turn& t : turns)
    if (t.role == "user") return true;
  return false;
}

}  // namespace

EncodedText encode_conversation(const std::vector<Turn>& turns, const ToyTokenizer& tok) {
  if (turns.empty()) throw InputError("encode_conversation: empty conversation");
  const bool dialogue = has_user_turn(turns);
  EncodedText e;
  append(e, {ToyTokenizer::kBos}, 0);
  for (const Turn& t : turns) {
    if (t.role == "user") {
      append(e, {ToyTokenizer::kUser}, 0);
      append(e, tok.tokenize(t.text), 0);
    } else if (t.role == "assistant") {
      if (dialogue) append(e, {ToyTokenizer::kAssistant}, 0);
      append(e, tok.tokenize(t.text), 1);
      append(e, {ToyTokenizer::kEos}, 1);
    } else {
      throw InputError("encode_conversation: unknown role '" + t.role + "'");
    }
  }
  return e;
}

std::vector<int> prompt_for(const std::vector<Turn>& turns, const ToyTokenizer& tok) {
  std::vector<int> ids{ToyTokenizer::kBos};
  for (const Turn& t : turns) {
    if (t.role != "user") break;
    ids.push_back(ToyTokenizer::kUser);
    const auto q = tok.tokenize(t.text);
    ids.insert(ids.end(), q.begin(), q.end());
    ids.push_back(ToyTokenizer::kAssistant);
    break;
  }
  return ids;
}

std::string first_answer(const std::vector<Turn>& turns) {
  for (const Turn& t : turns)
    if (t.role == "assistant") return t.text;
  return {};
}

TrainingBatch collate(const std::vector<Sample>& samples, const ToyTokenizer& tok,
                      const vision::PelConfig& pel, const std::filesystem::path& base_dir) {
  if (samples.empty()) throw InputError("collate: empty batch");
  TrainingBatch b;
  std::vector<EncodedText> texts;
  for (const Sample& s : samples) {
    if (s.conversation.empty()) throw InputError("collate: sample '" + s.id + "' has an empty conversation");
    s.validate();
    b.ids.push_back(s.id);
    b.raw_images.push_back(load_image(s, base_dir));
    b.images.push_back(vision::preprocess_image(b.raw_images.back(), pel));
    b.layouts.push_back(
        vision::PatchLayout::for_grid(b.images.back().dim(1) / pel.unit(), b.images.back().dim(2) / pel.unit()));
    texts.push_back(encode_conversation(s.conversation, tok));
    b.max_text_len = std::max(b.max_text_len, texts.back().ids.size());
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const EncodedText& t = texts[i];
    const std::size_t span = b.layouts[i].total_len, len = span + b.max_text_len;
    std::vector<int> ids = t.ids;
    ids.resize(b.max_text_len, ToyTokenizer::kPad);
    std::vector<int> labels(len, ToyTokenizer::kPad);
    std::vector<std::uint8_t> mask(len, 0);
    // Position p (p >= span - 1) predicts text token p + 1 - span.
    for (std::size_t k = 0; k < t.ids.size(); ++k) {
      const std::size_t p = span + k - 1;
      labels[p] = t.ids[k];
      mask[p] = t.supervised[k];
    }
    b.text_len.push_back(t.ids.size());
    b.text_ids.push_back(std::move(ids));
    b.labels.push_back(std::move(labels));
    b.loss_mask.push_back(std::move(mask));
  }
  return b;
}

}  // namespace eve::data
