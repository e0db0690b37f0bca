#include "bprobe/losses.hpp"

#include <cmath>
#include <numeric>

namespace bprobe::losses {

using tinylm::ForwardTrace;
using tinylm::Tokenizer;

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !std::isfinite(lambda1) || !(lambda2 >= 0.0) || !std::isfinite(lambda2))
    throw DataError("loss weights must be finite and non-negative");
}

double nll_term(double prob) { return -std::log(std::max(prob, kLogFloor)); }

WindowLossResult window_loss(const WindowDistFn& dists, int t, std::span<const int> answer) {
  const int k = static_cast<int>(answer.size());
  if (k == 0) throw DataError("window_loss: empty answer");
  if (k > t) throw DataError("window_loss: answer longer than output window");
  WindowLossResult best;
  bool first = true;
  for (int j = 0; j + k <= t; ++j) {
    std::vector<Vec> win = dists(j, answer);
    double nll = 0.0;
    for (int i = 0; i < k; ++i) nll += nll_term(win[i][answer[i]]);
    if (first || nll < best.value) {
      best.value = nll;
      best.window_start = j;
      first = false;
    }
  }
  return best;
}

MultiAnswerResult multi_answer_loss(const WindowDistFn& dists, int t,
                                    std::span<const TokenSeq> answers) {
  if (answers.empty()) throw DataError("multi_answer_loss: empty answer set");
  MultiAnswerResult best;
  bool first = true;
  for (int a = 0; a < static_cast<int>(answers.size()); ++a) {
    WindowLossResult w = window_loss(dists, t, answers[a].ids);
    if (first || w.value < best.value) {
      best.value = w.value;
      best.answer_index = a;
      best.window_start = w.window_start;
      first = false;
    }
  }
  return best;
}

namespace {

// prompt ++ decoded[0..j) ++ answer[0..k-1): the final answer token never
// feeds forward, only its probability is read.
Mat window_sequence(const tinylm::ModelParams& params, const Mat& prompt, std::span<const int> decoded,
                    int j, std::span<const int> answer) {
  const int n = static_cast<int>(prompt.rows());
  const int k = static_cast<int>(answer.size());
  Mat seq(n + j + k - 1, params.config.d_model);
  seq.topRows(n) = prompt;
  for (int i = 0; i < j; ++i) seq.row(n + i) = params.embedding.row(decoded[i]);
  for (int i = 0; i + 1 < k; ++i) seq.row(n + j + i) = params.embedding.row(answer[i]);
  return seq;
}

}  // namespace

WindowDistFn make_window_dist_fn(const tinylm::ModelParams& params, const Mat& prompt_embeddings,
                                 std::span<const int> decoded) {
  const int n = static_cast<int>(prompt_embeddings.rows());
  // capture by value so the fn outlives the caller's locals
  Mat prompt = prompt_embeddings;
  std::vector<int> dec(decoded.begin(), decoded.end());
  const tinylm::ModelParams* p = &params;
  return [p, prompt = std::move(prompt), dec = std::move(dec), n](
             int j, std::span<const int> answer) -> std::vector<Vec> {
    const int k = static_cast<int>(answer.size());
    Mat seq = window_sequence(*p, prompt, dec, j, answer);
    std::vector<int> rows(k);
    std::iota(rows.begin(), rows.end(), n + j - 1);
    Mat logits = tinylm::forward_rows(*p, seq, rows, nullptr);
    std::vector<Vec> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) out.push_back(tinylm::softmax(logits.row(i).transpose()));
    return out;
  };
}

double semantic_loss_cached(const tinylm::ModelParams& params, const Mat& prompt_embeddings,
                            const Vec& question_hidden) {
  Vec h = tinylm::hidden_repr_emb(params, prompt_embeddings, nullptr);
  return (h - question_hidden).norm();
}

double semantic_loss(const Model& model, const PromptState& prompt, const PromptState& question) {
  Vec hq = tinylm::hidden_repr(model.params, question);
  return semantic_loss_cached(model.params, prompt.materialize(model.params.embedding), hq);
}

SlotNearest nearest_row(const Vec& x, const Mat& embedding) {
  SlotNearest best;
  double best_d2 = 0.0;
  for (int v = 0; v < embedding.rows(); ++v) {
    double d2 = (x.transpose() - embedding.row(v)).squaredNorm();
    if (best.row < 0 || d2 < best_d2) {
      best_d2 = d2;
      best.row = v;
    }
  }
  best.distance = std::sqrt(best_d2);
  return best;
}

double discreteness_loss(const PromptState& prompt, const Mat& embedding) {
  if (prompt.size() == 0) throw DataError("discreteness_loss: empty prompt");
  double sum = 0.0;
  for (const auto& slot : prompt.slots) {
    if (slot.discrete()) continue;  // exactly on a row of W
    sum += nearest_row(slot.vec, embedding).distance;
  }
  return sum;
}

namespace {

struct Context {
  const Model* model;
  const PromptState* prompt;
  Mat x;  // materialized slots
  Vec hq;
  std::vector<int> decoded;
  MultiAnswerResult target;
  double semantic = 0.0;
  double discreteness = 0.0;
};

Context evaluate(const TotalLossInputs& in) {
  if (in.model == nullptr || in.prompt == nullptr) throw DataError("total_loss: missing inputs");
  if (in.answers.empty()) throw DataError("total_loss: empty answer set");
  in.weights.validate();
  if (in.decode_horizon < 1) throw DataError("total_loss: decode horizon must be >= 1");

  Context ctx;
  ctx.model = in.model;
  ctx.prompt = in.prompt;
  const auto& params = in.model->params;
  ctx.x = in.prompt->materialize(params.embedding);

  ctx.decoded = tinylm::greedy_decode_ids(params, ctx.x, in.decode_horizon);
  WindowDistFn fn = make_window_dist_fn(params, ctx.x, ctx.decoded);
  ctx.target = multi_answer_loss(fn, in.decode_horizon, in.answers);

  if (in.question_hidden != nullptr) {
    ctx.hq = *in.question_hidden;
  } else {
    if (in.question_ids.empty()) throw DataError("total_loss: missing question");
    Mat q = tinylm::embed_ids(params, in.question_ids);
    ctx.hq = tinylm::hidden_repr_emb(params, q, nullptr);
  }
  ctx.semantic = semantic_loss_cached(params, ctx.x, ctx.hq);
  ctx.discreteness = discreteness_loss(*in.prompt, params.embedding);
  return ctx;
}

LossBreakdown breakdown_of(const Context& ctx, const LossWeights& w) {
  LossBreakdown b;
  b.target = ctx.target.value;
  b.semantic = ctx.semantic;
  b.discreteness = ctx.discreteness;
  b.total = b.target + w.lambda1 * b.semantic + w.lambda2 * b.discreteness;
  b.best_window_start = ctx.target.window_start;
  b.best_answer_index = ctx.target.answer_index;
  return b;
}

// d(target)/d(slots): backward through the argmin (answer, window) branch.
Mat target_grad_rows(const tinylm::ModelParams& params, const Mat& x, std::span<const int> decoded,
                     const MultiAnswerResult& target, std::span<const TokenSeq> answers) {
  const int n = static_cast<int>(x.rows());
  const auto& answer = answers[target.answer_index].ids;
  const int k = static_cast<int>(answer.size());
  const int j = target.window_start;

  Mat seq = window_sequence(params, x, decoded, j, answer);
  std::vector<int> rows(k);
  std::iota(rows.begin(), rows.end(), n + j - 1);
  ForwardTrace trace;
  Mat logits = tinylm::forward_rows(params, seq, rows, &trace);

  tinylm::BackwardSeeds seeds;
  for (int i = 0; i < k; ++i) {
    Vec p = tinylm::softmax(logits.row(i).transpose());
    if (p[answer[i]] <= kLogFloor) continue;  // clamped: locally constant
    Vec dl = p;
    dl[answer[i]] -= 1.0;
    seeds.d_logit_rows.emplace_back(rows[i], std::move(dl));
  }
  Mat dx = tinylm::backward(params, trace, seeds, nullptr);
  return dx.topRows(n);
}

Mat semantic_grad_rows(const tinylm::ModelParams& params, const Mat& x, const Vec& hq,
                       double semantic_value) {
  const int n = static_cast<int>(x.rows());
  if (semantic_value < 1e-12) return Mat::Zero(n, params.config.d_model);
  ForwardTrace trace;
  Vec h = tinylm::hidden_repr_emb(params, x, &trace);
  tinylm::BackwardSeeds seeds;
  seeds.d_final_hidden_rows.emplace_back(n, (h - hq) / semantic_value);
  Mat dx = tinylm::backward(params, trace, seeds, nullptr);
  return dx.topRows(n);
}

Mat discreteness_grad_rows(const PromptState& prompt, const Mat& embedding, int d_model) {
  Mat g = Mat::Zero(prompt.size(), d_model);
  for (int i = 0; i < prompt.size(); ++i) {
    const auto& slot = prompt.slots[i];
    if (slot.discrete()) continue;
    SlotNearest nn = nearest_row(slot.vec, embedding);
    if (nn.distance < 1e-12) continue;  // kink at zero; minimal subgradient
    g.row(i) = (slot.vec.transpose() - embedding.row(nn.row)) / nn.distance;
  }
  return g;
}

}  // namespace

LossBreakdown total_loss(const TotalLossInputs& in) {
  Context ctx = evaluate(in);
  return breakdown_of(ctx, in.weights);
}

TotalLossGrad total_loss_grad(const TotalLossInputs& in) {
  Context ctx = evaluate(in);
  const auto& params = in.model->params;

  TotalLossGrad out;
  out.breakdown = breakdown_of(ctx, in.weights);
  out.decoded = ctx.decoded;
  out.d_slots = target_grad_rows(params, ctx.x, ctx.decoded, ctx.target, in.answers);
  if (in.weights.lambda1 != 0.0)
    out.d_slots += in.weights.lambda1 * semantic_grad_rows(params, ctx.x, ctx.hq, ctx.semantic);
  if (in.weights.lambda2 != 0.0)
    out.d_slots += in.weights.lambda2 *
                   discreteness_grad_rows(*in.prompt, params.embedding, params.config.d_model);
  if (!out.d_slots.allFinite())
    throw NumericError("total_loss_grad: non-finite gradient");
  return out;
}

TargetLossGrad target_loss_grad(const Model& model, const PromptState& prompt,
                                std::span<const TokenSeq> answers, int decode_horizon) {
  if (answers.empty()) throw DataError("target_loss_grad: empty answer set");
  const auto& params = model.params;
  Mat x = prompt.materialize(params.embedding);
  std::vector<int> decoded = tinylm::greedy_decode_ids(params, x, decode_horizon);
  WindowDistFn fn = make_window_dist_fn(params, x, decoded);
  MultiAnswerResult target = multi_answer_loss(fn, decode_horizon, answers);

  TargetLossGrad out;
  out.value = target.value;
  out.answer_index = target.answer_index;
  out.window_start = target.window_start;
  out.d_slots = target_grad_rows(params, x, decoded, target, answers);
  if (!out.d_slots.allFinite()) throw NumericError("target_loss_grad: non-finite gradient");
  return out;
}

}  // namespace bprobe::losses
