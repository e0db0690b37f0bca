#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bprobe/common.hpp"
#include "bprobe/tokenizer.hpp"

namespace bprobe::corpus {

struct KnowledgeRecord {
  std::string id;
  std::string subject;
  std::string relation;
  std::string object;
  std::vector<std::string> paraphrases;  // probe questions, subject filled in
  std::vector<std::string> aliases;      // answer surface forms, object first
  std::string category;
  bool counterfactual = false;
};

// Newline-delimited JSON, one record per line; schema errors carry the line number.
std::vector<KnowledgeRecord> load_records(const std::string& path);
void save_records(std::span<const KnowledgeRecord> records, const std::string& path);

struct WorldSpec {
  int entities = 50;  // subject entities
  int relations = 5;
  int facts = 200;
  int counterfactuals = 50;
  int templates_per_relation = 3;  // templates[0] trains, the rest are held out
  int objects_per_relation = 60;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RelationSchema {
  std::string name;
  std::vector<std::string> templates;  // "{s}" placeholder, cloze at the end
};

struct SyntheticWorld {
  WorldSpec spec;
  std::vector<std::string> subjects;
  std::vector<RelationSchema> relations;
  std::vector<std::vector<std::string>> object_pools;  // per relation
  std::vector<KnowledgeRecord> facts;                  // paraphrases = held-out templates
  std::vector<KnowledgeRecord> counterfactuals;
  std::vector<std::string> training_prompts;   // per fact, training-template question
  std::vector<std::string> training_sentences; // full corpus lines, unshuffled
  std::vector<std::string> extra_vocab;        // held-out template + scaffold words

  std::vector<KnowledgeRecord> all_records() const;
};

SyntheticWorld generate_world(const WorldSpec& spec);

// Corpus lines shuffled by the world seed; ids are filled in by training once
// a tokenizer exists.
std::vector<tinylm::TokenSeq> render_training_corpus(const SyntheticWorld& world);

// Words the discriminator scaffold needs in-vocabulary.
const std::vector<std::string>& scaffold_words();

}  // namespace bprobe::corpus
