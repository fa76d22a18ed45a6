#pragma once

// Word-level tokenizer over the closed vocabulary of the synthetic grammar.
// Words are separated by single spaces; '?' is split off as its own token.
// Runs of out-of-vocabulary words fall back to one token per byte.
//
//   0 <pad>  1 <bos>  2 <eos>  3 <img>  4 <user>  5 <assistant>
//   6..261   raw bytes 0x00..0xff
//   262..    vocabulary words

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace eve::data {

class ToyTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kImg = 3;
  static constexpr int kUser = 4;
  static constexpr int kAssistant = 5;
  static constexpr int kByteBase = 6;
  static constexpr int kWordBase = kByteBase + 256;

  // The vocabulary of the built-in scene grammar.
  ToyTokenizer();
  explicit ToyTokenizer(std::vector<std::string> words);

  std::size_t vocab_size() const noexcept { return kWordBase + words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  std::vector<int> tokenize(std::string_view text) const;
  // Special tokens other than byte/word ids are skipped.
  std::string detokenize(const std::vector<int>& ids) const;

  static bool is_special(int id) noexcept { return id >= 0 && id < kByteBase; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

}  // namespace eve::data
