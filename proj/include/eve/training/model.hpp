#pragma once

// The trainable bundle: patch embedding + decoder (+ alignment head while
// training), all registered in one ParamStore. The frozen teacher lives
// outside it.

#include <cstdint>
#include <optional>
#include <string>

#include "eve/alignment/patch_aligner.hpp"
#include "eve/decoder/decoder.hpp"
#include "eve/teacher/teacher.hpp"
#include "eve/vision/patch_embedding.hpp"

namespace eve::train {

struct ModelConfig {
  vision::PelConfig pel;
  decoder::DecoderConfig decoder;
  teacher::TeacherConfig teacher;
  align::PalConfig pal;
  std::uint64_t seed = 1;

  void validate() const;
};

// Parameter group of a tensor name: "pel", "pal", "decoder" or "teacher".
std::string param_group(const std::string& name);

template <class T>
class EveModel {
 public:
  EveModel(const ModelConfig& cfg, bool with_alignment);

  const ModelConfig& config() const noexcept { return cfg_; }
  num::ParamStore<T>& params() noexcept { return store_; }
  const num::ParamStore<T>& params() const noexcept { return store_; }
  const vision::PatchEmbedding<T>& pel() const noexcept { return pel_; }
  const decoder::Decoder<T>& decoder() const noexcept { return decoder_; }
  bool has_alignment() const noexcept { return pal_.has_value(); }
  const align::PatchAligner<T>& aligner() const { return pal_.value(); }

  // Copies matching tensors in; names absent from this model are ignored
  // unless `strict`, in which case every model tensor must be present.
  template <class Map>
  void load(const Map& tensors, bool strict);

  // Image (3 x H x W, already preprocessed) + text -> logits and hidden states.
  decoder::DecoderOutput<T> forward(const num::Tensor<T>& image, std::span<const int> text_ids,
                                    vision::PatchLayout* layout_out = nullptr) const;

 private:
  ModelConfig cfg_;
  num::ParamStore<T> store_;
  vision::PatchEmbedding<T> pel_;
  decoder::Decoder<T> decoder_;
  std::optional<align::PatchAligner<T>> pal_;
};

extern template class EveModel<float>;
extern template class EveModel<double>;

template <class T>
template <class Map>
void EveModel<T>::load(const Map& tensors, bool strict) {
  for (auto& [name, var] : store_.entries()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      if (strict) throw std::runtime_error("checkpoint lacks tensor '" + name + "'");
      continue;
    }
    if (it->second.shape() != var.shape()) {
      throw num::ShapeError("tensor '" + name + "' has shape " + num::to_string(it->second.shape()) +
                            ", model expects " + num::to_string(var.shape()));
    }
    var.mutable_value() = it->second.template cast<T>();
  }
}

}  // namespace eve::train
