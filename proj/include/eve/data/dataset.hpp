#pragma once

// Samples, manifests and collation into decoder-ready sequences.
//
// Text layout of one sample, appended after its vision tokens:
//   caption only : <bos> caption <eos>
//   dialogue     : <bos> <user> q <assistant> a <eos> [<user> q <assistant> a <eos> ...]
// Only assistant text and the <eos> closing it are supervised.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eve/data/image.hpp"
#include "eve/data/synth.hpp"
#include "eve/data/tokenizer.hpp"
#include "eve/vision/patch_embedding.hpp"

namespace eve::data {

struct Sample {
  std::string id;
  std::optional<SceneSpec> scene;  // generator parameters, or
  std::string image_path;          // a PPM file, relative to the manifest directory
  std::vector<Turn> conversation;

  // At least one assistant turn, roles known, exactly one image source.
  void validate() const;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetManifest {
  std::string split;  // "caption" | "sft" | anything for ingested data
  std::uint64_t seed = 0;
  std::vector<Sample> records;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Caption splits get one assistant caption turn; "sft" gets QA dialogue.
DatasetManifest synth_generate(std::size_t n, std::uint64_t seed, const std::string& split,
                               std::size_t base_edge = 224);

// JSON lines. The first line is a header {"format","split","seed"}; each
// further line is {"id", "scene"|"image", "conversation":[{"role","text"}]}.
std::string manifest_to_jsonl(const DatasetManifest& m);
DatasetManifest manifest_from_jsonl(const std::string& text);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

Image load_image(const Sample& s, const std::filesystem::path& base_dir = {});

struct EncodedText {
  std::vector<int> ids;
  std::vector<std::uint8_t> supervised;  // per id: 1 if it is a training target
};

EncodedText encode_conversation(const std::vector<Turn>& turns, const ToyTokenizer& tok);
// Prefix to generate from: <bos> for captions, or the first user turn
// followed by <assistant>.
std::vector<int> prompt_for(const std::vector<Turn>& turns, const ToyTokenizer& tok);
// Reference answer for the prompt above (caption or first assistant turn).
std::string first_answer(const std::vector<Turn>& turns);

struct TrainingBatch {
  std::vector<std::string> ids;
  std::vector<Image> raw_images;
  std::vector<num::Tensor<float>> images;  // preprocessed, 3 x H x W
  std::vector<vision::PatchLayout> layouts;
  std::size_t max_text_len = 0;
  std::vector<std::vector<int>> text_ids;  // padded with <pad> to max_text_len
  std::vector<std::size_t> text_len;
  // Over the full sequence (vision span + max_text_len): labels[i] is the
  // token at i+1, mask 0 on the vision span, padding and unsupervised text.
  std::vector<std::vector<int>> labels;
  std::vector<std::vector<std::uint8_t>> loss_mask;

  std::size_t size() const noexcept { return ids.size(); }
};

TrainingBatch collate(const std::vector<Sample>& samples, const ToyTokenizer& tok,
                      const vision::PelConfig& pel, const std::filesystem::path& base_dir = {});

}  // namespace eve::data
