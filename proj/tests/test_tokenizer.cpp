#include <doctest.h>

#include "fixtures.hpp"

using namespace bprobe;
using tinylm::Tokenizer;

TEST_CASE("tokenize maps words and repeats consistently") {
  std::vector<std::string> corpus = {"isatis tinctoria is a source of indigo"};
  Tokenizer tok = Tokenizer::build(corpus);
  auto seq = tok.tokenize("a a");
  REQUIRE(seq.ids.size() == 2);
  CHECK(seq.ids[0] == seq.ids[1]);
  CHECK(seq.ids[0] == tok.id("a"));
}

TEST_CASE("out-of-vocabulary words map to <unk>") {
  Tokenizer tok = Tokenizer::build({std::vector<std::string>{"isatis is a plant"}});
  auto seq = tok.tokenize("isatis zzzz");
  REQUIRE(seq.ids.size() == 2);
  CHECK(seq.ids[0] == tok.id("isatis"));
  CHECK(seq.ids[1] == Tokenizer::kUnk);
}

TEST_CASE("empty text is rejected") {
  Tokenizer tok = Tokenizer::build({std::vector<std::string>{"a b"}});
  CHECK_THROWS_AS(tok.tokenize(""), DataError);
}

TEST_CASE("round trip equals whitespace-normalized text over a generated corpus") {
  corpus::WorldSpec spec;
  spec.entities = 8;
  spec.relations = 3;
  spec.facts = 15;
  spec.counterfactuals = 3;
  spec.seed = 11;
  auto world = corpus::generate_world(spec);
  auto sentences = corpus::render_training_corpus(world);
  std::vector<std::string> lines;
  for (auto& s : sentences) lines.push_back(s.text);
  Tokenizer tok = Tokenizer::build(lines, world.extra_vocab);

  for (const auto& line : lines) {
    auto seq = tok.tokenize(line);
    std::string normalized;
    for (const auto& w : Tokenizer::split_words(line)) {
      if (!normalized.empty()) normalized += ' ';
      normalized += w;
    }
    CHECK(tok.detokenize(seq.ids) == normalized);
  }
  // and with messy whitespace
  auto seq = tok.tokenize("  " + lines[0] + "\t ");
  CHECK(tok.detokenize(seq.ids) == tok.detokenize(tok.tokenize(lines[0]).ids));
}

TEST_CASE("special ids are fixed and word lists validated") {
  Tokenizer tok = Tokenizer::build({std::vector<std::string>{"a"}});
  CHECK(tok.id("<bos>") == Tokenizer::kBos);
  CHECK(tok.id("<eos>") == Tokenizer::kEos);
  CHECK(tok.id("<pad>") == Tokenizer::kPad);
  CHECK_THROWS_AS(Tokenizer::from_words({"a", "b"}), DataError);
  CHECK_THROWS_AS(tok.detokenize(std::vector<int>{999}), DataError);
}
