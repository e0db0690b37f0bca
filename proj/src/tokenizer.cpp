#include "bprobe/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace bprobe::tinylm {

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

Tokenizer Tokenizer::build(std::span<const std::string> corpus_lines,
                           std::span<const std::string> extra_words) {
  std::set<std::string> uniq;
  for (const auto& line : corpus_lines) {
    for (auto& w : split_words(line)) uniq.insert(std::move(w));
  }
  for (const auto& w : extra_words) {
    if (!w.empty()) uniq.insert(w);
  }
  std::vector<std::string> words = {"<bos>", "<eos>", "<unk>", "<pad>"};
  for (const auto& w : uniq) words.push_back(w);
  return from_words(std::move(words));
}

Tokenizer Tokenizer::from_words(std::vector<std::string> words) {
  if (words.size() < 4 || words[0] != "<bos>" || words[1] != "<eos>" || words[2] != "<unk>" ||
      words[3] != "<pad>") {
    throw DataError("tokenizer word list must start with <bos> <eos> <unk> <pad>");
  }
  Tokenizer t;
  t.words_ = std::move(words);
  for (int i = 0; i < static_cast<int>(t.words_.size()); ++i) {
    auto [it, inserted] = t.index_.emplace(t.words_[i], i);
    if (!inserted) throw DataError("duplicate word in tokenizer vocabulary: " + t.words_[i]);
  }
  return t;
}

TokenSeq Tokenizer::tokenize(std::string_view text) const {
  if (text.empty()) throw DataError("tokenize: empty text");
  TokenSeq seq;
  seq.text = std::string(text);
  for (const auto& w : split_words(text)) {
    auto it = index_.find(w);
    seq.ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return seq;
}

std::string Tokenizer::detokenize(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= size()) throw DataError("detokenize: token id out of range");
    if (i) out += ' ';
    out += words_[id];
  }
  return out;
}

int Tokenizer::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

bool Tokenizer::contains(std::string_view word) const {
  return index_.count(std::string(word)) > 0;
}

}  // namespace bprobe::tinylm
