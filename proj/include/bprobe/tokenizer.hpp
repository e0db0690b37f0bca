#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bprobe/common.hpp"

namespace bprobe::tinylm {

struct TokenSeq {
  std::vector<int> ids;
  std::string text;
};

// Whitespace word-level tokenizer with fixed special ids. Vocabulary is the
// sorted set of corpus words plus declared extra words; out-of-vocabulary
// words map to <unk>.
class Tokenizer {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kPad = 3;

  Tokenizer() = default;

  static Tokenizer build(std::span<const std::string> corpus_lines,
                         std::span<const std::string> extra_words = {});
  // Rebuild from an id-ordered word list (checkpoint load path).
  static Tokenizer from_words(std::vector<std::string> words);

  TokenSeq tokenize(std::string_view text) const;
  std::string detokenize(std::span<const int> ids) const;

  int id(std::string_view word) const;  // kUnk when absent
  bool contains(std::string_view word) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  static std::vector<std::string> split_words(std::string_view text);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace bprobe::tinylm
