#include "eve/training/model.hpp"

#include <stdexcept>

namespace eve::train {

void ModelConfig::validate() const {
  pel.validate();
  decoder.validate();
  teacher.validate();
  pal.validate();
  if (pel.d_model != decoder.d_model) {
    throw std::invalid_argument("model: patch embedding width " + std::to_string(pel.d_model) +
                                " != decoder width " + std::to_string(decoder.d_model));
  }
  if (pal.interval > decoder.n_layers) {
    throw std::invalid_argument("model: alignment interval " + std::to_string(pal.interval) + " exceeds " +
                                std::to_string(decoder.n_layers) + " decoder layers");
  }
}

std::string param_group(const std::string& name) {
  for (const char* g : {"pel", "pal", "decoder", "teacher"}) {
    const std::string prefix = std::string(g) + ".";
    if (name.compare(0, prefix.size(), prefix) == 0) return g;
  }
  throw std::invalid_argument("parameter '" + name + "' belongs to no group");
}

template <class T>
EveModel<T>::EveModel(const ModelConfig& cfg, bool with_alignment)
    : cfg_((cfg.validate(), cfg)),
      pel_(cfg_.pel, store_, cfg_.seed),
      decoder_(cfg_.decoder, store_, cfg_.seed) {
  if (with_alignment) pal_.emplace(cfg_.pal, cfg_.decoder.n_layers, cfg_.decoder.d_model, cfg_.teacher.d_t, store_, cfg_.seed);
}

template <class T>
decoder::DecoderOutput<T> EveModel<T>::forward(const num::Tensor<T>& image, std::span<const int> text_ids,
                                               vision::PatchLayout* layout_out) const {
  const auto vision = pel_.forward(image);
  if (layout_out) *layout_out = vision.layout;
  return decoder_.forward(vision, text_ids);
}

template class EveModel<float>;
template class EveModel<double>;

}  // namespace eve::train
