#pragma once

#include <span>
#include <string>
#include <vector>

#include "bprobe/corpus.hpp"
#include "bprobe/pgdc.hpp"
#include "bprobe/tinylm.hpp"

namespace bprobe::baselines {

using tinylm::Model;
using tinylm::TokenSeq;

enum class Kind { Zero, Few, Dis, TriggerToken };
enum class Aggregate { SingleRandomParaphrase, AnyParaphrase };

struct BaselineKind {
  Kind kind = Kind::Zero;
  Aggregate aggregate = Aggregate::AnyParaphrase;
  int exemplar_count = 4;  // Few
  int trigger_count = 5;   // TriggerToken
  int trigger_rounds = 3;
};

// Greedy decode from the raw paraphrase; success via the shared alias-window matcher.
bool zero_shot_probe(const Model& model, const TokenSeq& paraphrase,
                     std::span<const TokenSeq> answers, int m);

struct Exemplar {
  TokenSeq question;
  TokenSeq answer;
};

// Exemplars prepended before the query, one sentence each, <eos>-separated
// (the tab of the usual "q a \t q a \t query" layout is whitespace to a
// word-level tokenizer, so the sentence boundary token stands in for it).
bool few_shot_probe(const Model& model, const TokenSeq& paraphrase,
                    std::span<const TokenSeq> answers, std::span<const Exemplar> exemplars, int m);

// Statement-judgment probe; success when the true-token logit beats the
// false-token logit at the first continuation position.
bool discriminator_probe(const Model& model, const TokenSeq& paraphrase, const TokenSeq& answer);

// Record-level aggregation. AnyParaphrase is a logical OR; SingleRandomParaphrase
// draws one paraphrase with the given seed. chosen (optional) reports the draw.
bool p_aggregate(const std::vector<bool>& per_paraphrase, Aggregate aggregate, std::uint64_t seed,
                 int* chosen = nullptr);

struct TriggerConfig {
  int trigger_count = 5;
  int rounds = 3;
  int decode_horizon = 10;
  // candidates kept from the full-vocabulary first-order scan and re-scored
  // with the true loss before the greedy swap
  int candidates = 8;
};

// HotFlip-style greedy token substitution on appended trigger slots; no
// semantic constraint of any kind (deliberately: it has no gate parameter).
pgdc::ProbeResult trigger_token_probe(const Model& model, const TokenSeq& paraphrase,
                                      std::span<const TokenSeq> answers,
                                      const TriggerConfig& config);

// Seeded same-relation exemplar retrieval from the fact records (query excluded);
// falls back to other facts if the relation has too few.
std::vector<Exemplar> pick_exemplars(std::span<const corpus::KnowledgeRecord> universe,
                                     const corpus::KnowledgeRecord& query, int paraphrase_index,
                                     int count, std::uint64_t seed,
                                     const tinylm::Tokenizer& tokenizer);

}  // namespace bprobe::baselines
