#include "bprobe/pgdc.hpp"

#include <algorithm>
#include <cmath>

namespace bprobe::pgdc {

using losses::nearest_row;
using tinylm::Tokenizer;

void PgdcConfig::validate() const {
  if (iterations < 1) throw DataError("pgdc config: iterations must be >= 1");
  if (!(learning_rate > 0.0)) throw DataError("pgdc config: learning rate must be > 0");
  if (decay_step < 1) throw DataError("pgdc config: decay step must be >= 1");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0))
    throw DataError("pgdc config: decay factor must be in (0, 1]");
  if (decode_horizon < 1) throw DataError("pgdc config: decode horizon must be >= 1");
  if (free_slots < 0) throw DataError("pgdc config: free slots must be >= 0");
  weights.validate();
}

PromptState proximal_project(const PromptState& prompt, const Mat& embedding, double c) {
  if (!(c > 0.0)) throw DataError("proximal_project: threshold must be > 0");
  PromptState out = prompt;
  for (auto& slot : out.slots) {
    if (slot.discrete()) continue;
    losses::SlotNearest nn = nearest_row(slot.vec, embedding);
    if (nn.distance < c) slot = Slot::from_token(nn.row);
  }
  return out;
}

PromptState full_snap(const PromptState& prompt, const Mat& embedding) {
  PromptState out = prompt;
  for (auto& slot : out.slots) {
    if (slot.discrete()) continue;
    slot = Slot::from_token(nearest_row(slot.vec, embedding).row);
  }
  return out;
}

double default_projection_ceil(const Mat& embedding) {
  const int v = static_cast<int>(embedding.rows());
  if (v < 2) throw DataError("projection ceil: embedding table too small");
  std::vector<double> nn(v);
  for (int i = 0; i < v; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < v; ++j) {
      if (j == i) continue;
      best = std::min(best, (embedding.row(i) - embedding.row(j)).squaredNorm());
    }
    nn[i] = std::sqrt(best);
  }
  std::sort(nn.begin(), nn.end());
  double median = nn[(v - 1) / 2];
  double c = 0.5 * median;
  if (!(c > 0.0)) throw DataError("projection ceil: degenerate embedding geometry");
  return c;
}

double resolve_projection_ceil(const Mat& embedding, const PgdcConfig& config) {
  if (config.projection_ceil > 0.0) return config.projection_ceil;
  double step_scale =
      0.5 * config.learning_rate * std::sqrt(static_cast<double>(embedding.cols()));
  return std::min(default_projection_ceil(embedding), step_scale);
}

double paraphrase_gate(const Model& model, std::span<const corpus::KnowledgeRecord> records,
                       double percentile) {
  std::vector<double> dists;
  for (const auto& rec : records) {
    if (rec.counterfactual || rec.paraphrases.size() < 2) continue;
    std::vector<Vec> hs;
    hs.reserve(rec.paraphrases.size());
    for (const auto& p : rec.paraphrases) {
      auto ids = prompt_ids_for_question(model.tokenizer.tokenize(p).ids);
      hs.push_back(tinylm::hidden_repr_emb(model.params, tinylm::embed_ids(model.params, ids), nullptr));
    }
    for (std::size_t a = 0; a < hs.size(); ++a)
      for (std::size_t b = a + 1; b < hs.size(); ++b) dists.push_back((hs[a] - hs[b]).norm());
  }
  if (dists.empty()) throw DataError("paraphrase gate: no fact record has two paraphrases");
  std::sort(dists.begin(), dists.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(percentile * static_cast<double>(dists.size())));
  rank = std::min(std::max<std::size_t>(rank, 1), dists.size());
  return dists[rank - 1];
}

AdamSlotState AdamSlotState::init(int slots, int d_model) {
  AdamSlotState s;
  s.m = Mat::Zero(slots, d_model);
  s.v = Mat::Zero(slots, d_model);
  return s;
}

StepResult pgdc_step(const Model& model, const PromptState& prompt, const Vec& question_hidden,
                     std::span<const TokenSeq> answers, const PgdcConfig& config,
                     double projection_ceil, AdamSlotState& state) {
  losses::TotalLossInputs in;
  in.model = &model;
  in.prompt = &prompt;
  in.question_hidden = &question_hidden;
  in.answers = answers;
  in.weights = config.weights;
  in.decode_horizon = config.decode_horizon;
  losses::TotalLossGrad g = losses::total_loss_grad(in);

  double lr = config.learning_rate *
              std::pow(config.decay_factor, static_cast<double>(state.t / config.decay_step));
  state.t += 1;
  double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.t));

  Mat x = prompt.materialize(model.params.embedding);
  state.m = config.adam_beta1 * state.m + (1.0 - config.adam_beta1) * g.d_slots;
  state.v.array() =
      config.adam_beta2 * state.v.array() + (1.0 - config.adam_beta2) * g.d_slots.array().square();
  x.array() -= lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + config.adam_eps);

  PromptState updated;
  updated.origin_question = prompt.origin_question;
  updated.slots.reserve(prompt.size());
  for (int i = 0; i < prompt.size(); ++i) updated.slots.push_back(Slot::from_vec(x.row(i).transpose()));

  StepResult out;
  out.prompt = proximal_project(updated, model.params.embedding, projection_ceil);
  out.breakdown = g.breakdown;
  return out;
}

AliasMatch find_alias_window(std::span<const int> decoded, std::span<const TokenSeq> answers) {
  for (int a = 0; a < static_cast<int>(answers.size()); ++a) {
    const auto& ids = answers[a].ids;
    if (ids.empty() || ids.size() > decoded.size()) continue;
    for (std::size_t j = 0; j + ids.size() <= decoded.size(); ++j) {
      if (std::equal(ids.begin(), ids.end(), decoded.begin() + static_cast<long>(j))) {
        return {a, static_cast<int>(j)};
      }
    }
  }
  return {};
}

std::vector<int> prompt_ids_for_question(std::span<const int> question_ids) {
  std::vector<int> ids;
  ids.reserve(question_ids.size() + 1);
  ids.push_back(Tokenizer::kBos);
  ids.insert(ids.end(), question_ids.begin(), question_ids.end());
  return ids;
}

namespace {

struct SuccessCheck {
  bool matched = false;
  AliasMatch match;
  PromptState snapped;
  std::vector<int> decoded;
  double semantic = 0.0;
};

SuccessCheck check_success(const Model& model, const PromptState& prompt,
                           std::span<const TokenSeq> answers, const Vec& question_hidden,
                           int horizon) {
  SuccessCheck out;
  out.snapped = full_snap(prompt, model.params.embedding);
  Mat x = out.snapped.materialize(model.params.embedding);
  out.decoded = tinylm::greedy_decode_ids(model.params, x, horizon);
  out.match = find_alias_window(out.decoded, answers);
  out.matched = out.match.found();
  if (out.matched)
    out.semantic = losses::semantic_loss_cached(model.params, x, question_hidden);
  return out;
}

}  // namespace

ProbeResult optimize_prompt(const Model& model, const TokenSeq& question,
                            std::span<const TokenSeq> answers, const PgdcConfig& config) {
  config.validate();
  if (question.ids.empty()) throw DataError("optimize_prompt: empty question");
  if (answers.empty()) throw DataError("optimize_prompt: empty answer set");
  for (const auto& a : answers) {
    if (a.ids.empty()) throw DataError("optimize_prompt: empty answer alias");
    if (static_cast<int>(a.ids.size()) > config.decode_horizon)
      throw DataError("optimize_prompt: alias '" + a.text + "' longer than decode horizon");
  }

  const auto& params = model.params;
  double ceil = resolve_projection_ceil(params.embedding, config);
  double gate = config.semantic_gate;

  std::vector<int> base_ids = prompt_ids_for_question(question.ids);
  PromptState prompt = PromptState::from_ids(base_ids);
  prompt.origin_question = question;
  for (int i = 0; i < config.free_slots; ++i)
    prompt.slots.push_back(Slot::from_token(Tokenizer::kPad));
  if (prompt.size() + config.decode_horizon > params.config.max_context)
    throw DataError("optimize_prompt: prompt plus horizon exceeds max_context");

  Vec hq = tinylm::hidden_repr_emb(params, tinylm::embed_ids(params, base_ids), nullptr);

  ProbeResult res;
  res.gate = gate;

  // iteration 0: the unmodified question already counts (zero-shot subsumption)
  SuccessCheck init = check_success(model, prompt, answers, hq, config.decode_horizon);
  if (init.matched && init.semantic <= gate) {
    res.success = true;
    res.iterations_used = 0;
    res.final_prompt = std::move(init.snapped);
    res.matched_answer = answers[init.match.answer_index];
    res.matched_window = init.match.window_start;
    res.final_semantic = init.semantic;
    res.final_decode = std::move(init.decoded);
    return res;
  }

  AdamSlotState adam = AdamSlotState::init(prompt.size(), params.config.d_model);
  for (int iter = 1; iter <= config.iterations; ++iter) {
    StepResult step = pgdc_step(model, prompt, hq, answers, config, ceil, adam);
    prompt = std::move(step.prompt);
    res.trace.push_back(step.breakdown);

    SuccessCheck check = check_success(model, prompt, answers, hq, config.decode_horizon);
    if (check.matched && check.semantic <= gate) {
      res.success = true;
      res.iterations_used = iter;
      res.final_prompt = std::move(check.snapped);
      res.matched_answer = answers[check.match.answer_index];
      res.matched_window = check.match.window_start;
      res.final_semantic = check.semantic;
      res.final_decode = std::move(check.decoded);
      return res;
    }
  }

  res.success = false;
  res.iterations_used = config.iterations;
  SuccessCheck last = check_success(model, prompt, answers, hq, config.decode_horizon);
  res.final_prompt = std::move(last.snapped);
  res.final_semantic = losses::semantic_loss_cached(
      params, res.final_prompt.materialize(params.embedding), hq);
  res.final_decode = std::move(last.decoded);
  return res;
}

std::vector<ProbeResult> probe_knowledge(const Model& model, const corpus::KnowledgeRecord& record,
                                         const PgdcConfig& config) {
  if (record.paraphrases.empty()) throw DataError("probe_knowledge: record has no paraphrases");
  if (record.aliases.empty()) throw DataError("probe_knowledge: record has no aliases");
  std::vector<TokenSeq> answers;
  answers.reserve(record.aliases.size());
  for (const auto& a : record.aliases) answers.push_back(model.tokenizer.tokenize(a));

  std::vector<ProbeResult> out;
  out.reserve(record.paraphrases.size());
  for (const auto& p : record.paraphrases)
    out.push_back(optimize_prompt(model, model.tokenizer.tokenize(p), answers, config));
  return out;
}

}  // namespace bprobe::pgdc
