#include "eve/data/tokenizer.hpp"

#include <stdexcept>

#include "eve/data/synth.hpp"

namespace eve::data {

ToyTokenizer::ToyTokenizer() : ToyTokenizer(scene_vocabulary()) {}

ToyTokenizer::ToyTokenizer(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const std::string& w = words_[i];
    if (w.empty() || w.find(' ') != std::string::npos) {
      throw std::invalid_argument("tokenizer: invalid vocabulary word '" + w + "'");
    }
    if (!index_.emplace(w, kWordBase + static_cast<int>(i)).second) {
      throw std::invalid_argument("tokenizer: duplicate vocabulary word '" + w + "'");
    }
  }
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

void push_bytes(std::vector<int>& out, std::string_view s) {
  for (unsigned char c : s) out.push_back(ToyTokenizer::kByteBase + c);
}

}  // namespace

// A vocabulary word is emitted only when the whitespace in front of it is
// exactly what detokenize() would insert; anything else goes out as bytes, so
// the round trip is exact for arbitrary input.
std::vector<int> ToyTokenizer::tokenize(std::string_view text) const {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t ws_begin = pos;
    while (pos < text.size() && is_space(text[pos])) ++pos;
    const std::string_view ws = text.substr(ws_begin, pos - ws_begin);
    if (pos == text.size()) {
      push_bytes(out, ws);
      break;
    }
    std::size_t end = pos + 1;
    if (text[pos] != '?') {
      while (end < text.size() && !is_space(text[end]) && text[end] != '?') ++end;
    }
    const std::string_view seg = text.substr(pos, end - pos);
    pos = end;
    const auto it = index_.find(seg);
    const std::string_view implied = (!out.empty() && seg != "?") ? " " : "";
    if (it != index_.end() && ws == implied) {
      out.push_back(it->second);
    } else {
      push_bytes(out, ws);
      push_bytes(out, seg);
    }
  }
  return out;
}

std::string ToyTokenizer::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id >= kByteBase && id < kWordBase) {
      out.push_back(static_cast<char>(id - kByteBase));
    } else if (id >= kWordBase && static_cast<std::size_t>(id - kWordBase) < words_.size()) {
      const std::string& w = words_[static_cast<std::size_t>(id - kWordBase)];
      if (!out.empty() && w != "?") out.push_back(' ');
      out += w;
    }
  }
  return out;
}

}  // namespace eve::data
