#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bprobe/tinylm.hpp"

namespace bprobe::boundary {

using tinylm::Model;
using tinylm::TokenSeq;

// Product of teacher-forced token probabilities of the answer immediately
// following the paraphrase.
double answer_probability(const Model& model, const TokenSeq& paraphrase, const TokenSeq& answer);

enum class Verdict { PromptAgnostic, PromptSensitive, Unanswerable };
const char* verdict_name(Verdict v);

struct ParaphraseEvidence {
  bool zero_shot_success = false;
  double answer_probability = 0.0;  // best alias
  bool pgdc_success = false;
};

struct RecordEvidence {
  std::string record_id;
  std::string category;
  std::vector<ParaphraseEvidence> paraphrases;
};

// PromptAgnostic: every paraphrase probability > epsilon.
// Unanswerable:   every probability < epsilon and no paraphrase succeeds under pgdc.
// PromptSensitive otherwise. epsilon must lie in (0.5, 1].
Verdict classify(const RecordEvidence& evidence, double epsilon);

struct MethodCoverage {
  int solved = 0;
  int total = 0;
  double rate() const { return total ? static_cast<double>(solved) / total : 0.0; }
};

struct RecordOutcome {
  std::string record_id;
  std::string category;
  std::map<std::string, bool> method_success;  // record-level, by method name
};

struct BoundaryReport {
  double epsilon = 0.0;
  int records_total = 0;
  std::map<std::string, std::array<int, 3>> verdicts_by_category;  // [PA, PS, UA]
  std::array<int, 3> verdict_totals = {0, 0, 0};
  std::map<std::string, std::map<std::string, MethodCoverage>> coverage;  // category -> method
  std::vector<int> iteration_histogram;  // successful pgdc runs by iterations used, bins 0..T
  std::string note;
};

struct BoundaryInputs {
  std::vector<RecordEvidence> evidence;  // one per classified record
  std::vector<Verdict> verdicts;         // parallel to evidence
  std::vector<RecordOutcome> outcomes;   // per-method record-level coverage rows
  std::vector<int> pgdc_success_iterations;
  int iteration_budget = 25;
  double epsilon = 0.0;
};

BoundaryReport boundary_stats(const BoundaryInputs& in);

}  // namespace bprobe::boundary
