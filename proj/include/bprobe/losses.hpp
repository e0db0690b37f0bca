#pragma once

#include <functional>
#include <span>
#include <vector>

#include "bprobe/tinylm.hpp"

namespace bprobe::losses {

using tinylm::Model;
using tinylm::TokenSeq;

struct LossWeights {
  double lambda1 = 1.0;   // semantic constraint weight
  double lambda2 = 0.01;  // discreteness regularizer weight
  void validate() const;
};

struct LossBreakdown {
  double target = 0.0;        // L
  double semantic = 0.0;      // R
  double discreteness = 0.0;  // delta
  double total = 0.0;         // L + lambda1*R + lambda2*delta, exact composition
  int best_window_start = 0;
  int best_answer_index = 0;
};

// Probabilities are clamped here before log so a zero never produces -inf.
constexpr double kLogFloor = 1e-300;
double nll_term(double prob);

// Teacher-forced next-token distributions for one window: given the window
// start j and the answer being forced, yields the k distributions
// P(position j+i | prompt, o_<j, answer_<i). The model-bound provider runs a
// forward per window; tests may substitute synthetic tables.
using WindowDistFn = std::function<std::vector<Vec>(int window_start, std::span<const int> answer)>;

struct WindowLossResult {
  double value = 0.0;
  int window_start = 0;
};
// min over window starts of the answer's negative log-likelihood; ties keep
// the lowest start.
WindowLossResult window_loss(const WindowDistFn& dists, int t, std::span<const int> answer);

struct MultiAnswerResult {
  double value = 0.0;
  int answer_index = 0;
  int window_start = 0;
};
// min over answers of window_loss; ties keep lowest answer index, then lowest
// window start.
MultiAnswerResult multi_answer_loss(const WindowDistFn& dists, int t,
                                    std::span<const TokenSeq> answers);

// Provider over a real model: positions come from greedily decoded output
// tokens, windows are teacher-forced on the answer prefix.
WindowDistFn make_window_dist_fn(const tinylm::ModelParams& params, const Mat& prompt_embeddings,
                                 std::span<const int> decoded);

// ||h(X) - h(Q)||_2 with both hidden representations <eos>-terminated.
double semantic_loss(const Model& model, const PromptState& prompt, const PromptState& question);
double semantic_loss_cached(const tinylm::ModelParams& params, const Mat& prompt_embeddings,
                            const Vec& question_hidden);

// sum over slots of the distance to the nearest embedding-table row; discrete
// slots contribute exactly zero.
double discreteness_loss(const PromptState& prompt, const Mat& embedding);

struct SlotNearest {
  int row = -1;
  double distance = 0.0;
};
SlotNearest nearest_row(const Vec& x, const Mat& embedding);

struct TotalLossInputs {
  const Model* model = nullptr;
  const PromptState* prompt = nullptr;
  std::span<const int> question_ids;        // used when question_hidden absent
  const Vec* question_hidden = nullptr;     // cached h(Q)
  std::span<const TokenSeq> answers;
  LossWeights weights;
  int decode_horizon = 10;
};

LossBreakdown total_loss(const TotalLossInputs& in);

// Same breakdown plus d(total)/d(slot embeddings), one row per slot.
struct TotalLossGrad {
  LossBreakdown breakdown;
  Mat d_slots;
  std::vector<int> decoded;  // greedy output used for the window search
};
TotalLossGrad total_loss_grad(const TotalLossInputs& in);

// Gradient of the target loss alone w.r.t. slot embeddings (trigger search).
struct TargetLossGrad {
  double value = 0.0;
  int answer_index = 0;
  int window_start = 0;
  Mat d_slots;
};
TargetLossGrad target_loss_grad(const Model& model, const PromptState& prompt,
                                std::span<const TokenSeq> answers, int decode_horizon);

}  // namespace bprobe::losses
