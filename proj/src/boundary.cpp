#include "bprobe/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bprobe/pgdc.hpp"

namespace bprobe::boundary {

double answer_probability(const Model& model, const TokenSeq& paraphrase, const TokenSeq& answer) {
  if (paraphrase.ids.empty()) throw DataError("answer_probability: empty paraphrase");
  if (answer.ids.empty()) throw DataError("answer_probability: empty answer");
  const auto& params = model.params;
  std::vector<int> ids = pgdc::prompt_ids_for_question(paraphrase.ids);
  const int n = static_cast<int>(ids.size());
  const int k = static_cast<int>(answer.ids.size());
  for (int i = 0; i + 1 < k; ++i) ids.push_back(answer.ids[i]);
  if (static_cast<int>(ids.size()) > params.config.max_context)
    throw DataError("answer_probability: sequence exceeds max_context");

  std::vector<int> rows(k);
  std::iota(rows.begin(), rows.end(), n - 1);
  Mat logits = tinylm::forward_rows(params, tinylm::embed_ids(params, ids), rows, nullptr);
  double prob = 1.0;
  for (int i = 0; i < k; ++i) {
    Vec p = tinylm::softmax(logits.row(i).transpose());
    prob *= p[answer.ids[i]];
  }
  return prob;
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::PromptAgnostic: return "prompt_agnostic";
    case Verdict::PromptSensitive: return "prompt_sensitive";
    case Verdict::Unanswerable: return "unanswerable";
  }
  return "unknown";
}

Verdict classify(const RecordEvidence& evidence, double epsilon) {
  if (evidence.paraphrases.empty()) throw DataError("classify: empty evidence");
  if (!(epsilon > 0.5) || !(epsilon <= 1.0))
    throw DataError("classify: epsilon must lie in (0.5, 1]");
  bool all_above = true, all_below = true, any_pgdc = false;
  for (const auto& p : evidence.paraphrases) {
    if (!(p.answer_probability > epsilon)) all_above = false;
    if (!(p.answer_probability < epsilon)) all_below = false;
    if (p.pgdc_success) any_pgdc = true;
  }
  if (all_above) return Verdict::PromptAgnostic;
  if (all_below && !any_pgdc) return Verdict::Unanswerable;
  return Verdict::PromptSensitive;
}

BoundaryReport boundary_stats(const BoundaryInputs& in) {
  if (in.evidence.size() != in.verdicts.size())
    throw DataError("boundary_stats: evidence/verdict size mismatch");
  BoundaryReport rep;
  rep.epsilon = in.epsilon;
  rep.records_total = static_cast<int>(in.evidence.size());
  rep.note =
      "verdicts quantify over this dataset's paraphrase set plus the optimized prompts, "
      "not over all possible phrasings";

  auto cat_of = [](const std::string& c) { return c.empty() ? std::string("other") : c; };
  for (std::size_t i = 0; i < in.evidence.size(); ++i) {
    auto& slot = rep.verdicts_by_category[cat_of(in.evidence[i].category)];
    int v = static_cast<int>(in.verdicts[i]);
    slot[v] += 1;
    rep.verdict_totals[v] += 1;
  }
  for (const auto& out : in.outcomes) {
    auto& per_cat = rep.coverage[cat_of(out.category)];
    for (const auto& [method, success] : out.method_success) {
      auto& cov = per_cat[method];
      cov.total += 1;
      cov.solved += success ? 1 : 0;
    }
  }
  rep.iteration_histogram.assign(in.iteration_budget + 1, 0);
  for (int iters : in.pgdc_success_iterations) {
    if (iters < 0 || iters > in.iteration_budget)
      throw DataError("boundary_stats: iterations outside [0, budget]");
    rep.iteration_histogram[iters] += 1;
  }
  return rep;
}

}  // namespace bprobe::boundary
