#pragma once

#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "bprobe/corpus.hpp"
#include "bprobe/losses.hpp"
#include "bprobe/tinylm.hpp"

namespace bprobe::pgdc {

using losses::LossBreakdown;
using losses::LossWeights;
using tinylm::Model;
using tinylm::TokenSeq;

struct PgdcConfig {
  double learning_rate = 1e-2;
  int iterations = 25;
  int decay_step = 5;
  double decay_factor = 0.9;
  // < 0 means "derive from checkpoint geometry" (half the median
  // nearest-neighbor distance between embedding rows).
  double projection_ceil = -1.0;
  LossWeights weights;
  int decode_horizon = 10;
  int free_slots = 0;
  // success-time bound on R(X, Q); infinity disables the gate.
  double semantic_gate = std::numeric_limits<double>::infinity();
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct ProbeResult {
  bool success = false;
  PromptState final_prompt;
  int iterations_used = 0;
  std::vector<LossBreakdown> trace;  // loss at the prompt each iteration started from
  std::optional<TokenSeq> matched_answer;
  std::optional<int> matched_window;
  double final_semantic = std::numeric_limits<double>::quiet_NaN();
  double gate = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> final_decode;
};

// Eq-7-style snap: continuous slots within distance c of their nearest
// embedding row become that token; slots at distance >= c stay continuous.
PromptState proximal_project(const PromptState& prompt, const Mat& embedding, double c);

// Every slot snapped to its nearest row regardless of distance (success-check copy).
PromptState full_snap(const PromptState& prompt, const Mat& embedding);

// Median nearest-neighbor distance between embedding rows, halved: the
// geometry cap for the projection threshold.
double default_projection_ceil(const Mat& embedding);

// Effective threshold: the geometry cap bounded by half an Adam step
// (learning_rate * sqrt(d_model)). A threshold wider than one step snaps
// every update straight back to its starting token and freezes the search;
// keeping it below the active step size lets moving slots escape while
// stalled slots get captured by nearby tokens.
double resolve_projection_ceil(const Mat& embedding, const PgdcConfig& config);

// 95th-percentile semantic distance between same-record paraphrase pairs of
// the non-counterfactual records; used as the success-time gate.
double paraphrase_gate(const Model& model, std::span<const corpus::KnowledgeRecord> records,
                       double percentile = 0.95);

struct AdamSlotState {
  Mat m, v;
  long t = 0;
  static AdamSlotState init(int slots, int d_model);
};

struct StepResult {
  PromptState prompt;
  LossBreakdown breakdown;
};

// One adaptive-moment update of every slot (discrete slots re-materialize
// from W and stay differentiable), followed by proximal projection. The
// learning rate decays by decay_factor every decay_step completed steps.
StepResult pgdc_step(const Model& model, const PromptState& prompt, const Vec& question_hidden,
                     std::span<const TokenSeq> answers, const PgdcConfig& config,
                     double projection_ceil, AdamSlotState& state);

ProbeResult optimize_prompt(const Model& model, const TokenSeq& question,
                            std::span<const TokenSeq> answers, const PgdcConfig& config);

// Independent optimize_prompt run per paraphrase; record succeeds when any
// paraphrase run does.
std::vector<ProbeResult> probe_knowledge(const Model& model, const corpus::KnowledgeRecord& record,
                                         const PgdcConfig& config);

// Success matcher shared by every probe: some alias appears as a contiguous
// token window of the decode. Scans aliases in order, then window starts.
struct AliasMatch {
  int answer_index = -1;
  int window_start = -1;
  bool found() const { return answer_index >= 0; }
};
AliasMatch find_alias_window(std::span<const int> decoded, std::span<const TokenSeq> answers);

std::vector<int> prompt_ids_for_question(std::span<const int> question_ids);

}  // namespace bprobe::pgdc
