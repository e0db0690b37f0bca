#include "bprobe/baselines.hpp"

#include <algorithm>
#include <numeric>

#include "bprobe/losses.hpp"

namespace bprobe::baselines {

using pgdc::find_alias_window;
using pgdc::prompt_ids_for_question;
using tinylm::Tokenizer;

namespace {

bool decode_and_match(const Model& model, std::span<const int> prompt_ids,
                      std::span<const TokenSeq> answers, int m, pgdc::AliasMatch* match = nullptr,
                      std::vector<int>* decoded_out = nullptr) {
  Mat x = tinylm::embed_ids(model.params, prompt_ids);
  std::vector<int> decoded = tinylm::greedy_decode_ids(model.params, x, m);
  pgdc::AliasMatch found = find_alias_window(decoded, answers);
  if (match) *match = found;
  if (decoded_out) *decoded_out = std::move(decoded);
  return found.found();
}

void require_answers(std::span<const TokenSeq> answers) {
  if (answers.empty()) throw DataError("probe: empty answer set");
  for (const auto& a : answers)
    if (a.ids.empty()) throw DataError("probe: empty answer alias");
}

}  // namespace

bool zero_shot_probe(const Model& model, const TokenSeq& paraphrase,
                     std::span<const TokenSeq> answers, int m) {
  if (paraphrase.ids.empty()) throw DataError("zero_shot_probe: empty paraphrase");
  require_answers(answers);
  return decode_and_match(model, prompt_ids_for_question(paraphrase.ids), answers, m);
}

bool few_shot_probe(const Model& model, const TokenSeq& paraphrase,
                    std::span<const TokenSeq> answers, std::span<const Exemplar> exemplars, int m) {
  if (paraphrase.ids.empty()) throw DataError("few_shot_probe: empty paraphrase");
  require_answers(answers);
  std::vector<int> ids = {Tokenizer::kBos};
  for (const auto& ex : exemplars) {
    ids.insert(ids.end(), ex.question.ids.begin(), ex.question.ids.end());
    ids.insert(ids.end(), ex.answer.ids.begin(), ex.answer.ids.end());
    ids.push_back(Tokenizer::kEos);
  }
  ids.insert(ids.end(), paraphrase.ids.begin(), paraphrase.ids.end());
  if (static_cast<int>(ids.size()) + m > model.params.config.max_context)
    throw DataError("few_shot_probe: exemplars plus query exceed max_context");
  return decode_and_match(model, ids, answers, m);
}

bool discriminator_probe(const Model& model, const TokenSeq& paraphrase, const TokenSeq& answer) {
  if (paraphrase.ids.empty()) throw DataError("discriminator_probe: empty paraphrase");
  if (answer.ids.empty()) throw DataError("discriminator_probe: record without answer");
  const auto& tok = model.tokenizer;
  int true_id = tok.id("true");
  int false_id = tok.id("false");
  if (true_id == Tokenizer::kUnk || false_id == Tokenizer::kUnk)
    throw DataError("discriminator_probe: vocabulary lacks the true/false scaffold words");

  auto push_words = [&](std::vector<int>& ids, const char* text) {
    for (const auto& w : Tokenizer::split_words(text)) ids.push_back(tok.id(w));
  };
  std::vector<int> ids = {Tokenizer::kBos};
  push_words(ids, "check whether the following statement is correct :");
  ids.insert(ids.end(), paraphrase.ids.begin(), paraphrase.ids.end());
  ids.insert(ids.end(), answer.ids.begin(), answer.ids.end());
  push_words(ids, ". the statement is ( true / false ) :");
  if (static_cast<int>(ids.size()) + 1 > model.params.config.max_context)
    throw DataError("discriminator_probe: statement exceeds max_context");

  Mat x = tinylm::embed_ids(model.params, ids);
  int last = static_cast<int>(ids.size()) - 1;
  Mat logits = tinylm::forward_rows(model.params, x, std::span<const int>(&last, 1), nullptr);
  return logits(0, true_id) > logits(0, false_id);
}

bool p_aggregate(const std::vector<bool>& per_paraphrase, Aggregate aggregate, std::uint64_t seed,
                 int* chosen) {
  if (per_paraphrase.empty()) throw DataError("p_aggregate: no paraphrase results");
  if (aggregate == Aggregate::AnyParaphrase) {
    if (chosen) *chosen = -1;
    return std::any_of(per_paraphrase.begin(), per_paraphrase.end(), [](bool b) { return b; });
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, per_paraphrase.size() - 1);
  std::size_t idx = pick(rng);
  if (chosen) *chosen = static_cast<int>(idx);
  return per_paraphrase[idx];
}

pgdc::ProbeResult trigger_token_probe(const Model& model, const TokenSeq& paraphrase,
                                      std::span<const TokenSeq> answers,
                                      const TriggerConfig& config) {
  if (paraphrase.ids.empty()) throw DataError("trigger_token_probe: empty paraphrase");
  if (config.trigger_count < 1) throw DataError("trigger_token_probe: trigger count must be >= 1");
  if (config.rounds < 0) throw DataError("trigger_token_probe: rounds must be >= 0");
  require_answers(answers);

  const auto& params = model.params;
  std::vector<int> ids = prompt_ids_for_question(paraphrase.ids);
  int first_trigger = static_cast<int>(ids.size());
  int last_word = ids.back();
  for (int i = 0; i < config.trigger_count; ++i) ids.push_back(last_word);
  if (static_cast<int>(ids.size()) + config.decode_horizon > params.config.max_context)
    throw DataError("trigger_token_probe: prompt plus horizon exceeds max_context");

  pgdc::ProbeResult res;
  auto finish = [&](int rounds_used, const pgdc::AliasMatch& match, std::vector<int> decoded) {
    res.final_prompt = PromptState::from_ids(ids);
    res.final_prompt.origin_question = paraphrase;
    res.final_decode = std::move(decoded);
    res.iterations_used = rounds_used;
    if (match.found()) {
      res.success = true;
      res.matched_answer = answers[match.answer_index];
      res.matched_window = match.window_start;
    }
  };

  pgdc::AliasMatch match;
  std::vector<int> decoded;
  if (decode_and_match(model, ids, answers, config.decode_horizon, &match, &decoded)) {
    finish(0, match, std::move(decoded));
    return res;
  }

  auto target_value = [&](const std::vector<int>& prompt_ids) {
    Mat x = tinylm::embed_ids(params, prompt_ids);
    std::vector<int> dec = tinylm::greedy_decode_ids(params, x, config.decode_horizon);
    return losses::multi_answer_loss(losses::make_window_dist_fn(params, x, dec),
                                     config.decode_horizon, answers)
        .value;
  };

  for (int round = 1; round <= config.rounds; ++round) {
    for (int pos = first_trigger; pos < first_trigger + config.trigger_count; ++pos) {
      PromptState prompt = PromptState::from_ids(ids);
      losses::TargetLossGrad g =
          losses::target_loss_grad(model, prompt, answers, config.decode_horizon);
      // first-order substitution score over the whole vocabulary: replacing
      // the token at pos with w changes the loss by about (e_w - e_cur) . grad
      Vec scores = params.embedding * g.d_slots.row(pos).transpose();
      std::vector<int> order(scores.size());
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + std::min<int>(config.candidates, scores.size()),
                        order.end(), [&](int a, int b) {
                          return scores[a] != scores[b] ? scores[a] < scores[b] : a < b;
                        });
      // re-score the shortlisted candidates with the true loss, keep the best
      int best_token = ids[pos];
      double best_loss = g.value;
      int shortlist = std::min<int>(config.candidates, scores.size());
      for (int c = 0; c < shortlist; ++c) {
        int w = order[c];
        if (w == ids[pos]) continue;
        std::vector<int> trial = ids;
        trial[pos] = w;
        double loss = target_value(trial);
        if (loss < best_loss) {
          best_loss = loss;
          best_token = w;
        }
      }
      ids[pos] = best_token;
    }
    losses::LossBreakdown bd;
    Mat x = tinylm::embed_ids(params, ids);
    decoded = tinylm::greedy_decode_ids(params, x, config.decode_horizon);
    losses::MultiAnswerResult target = losses::multi_answer_loss(
        losses::make_window_dist_fn(params, x, decoded), config.decode_horizon, answers);
    bd.target = target.value;
    bd.total = target.value;
    bd.best_answer_index = target.answer_index;
    bd.best_window_start = target.window_start;
    res.trace.push_back(bd);

    match = find_alias_window(decoded, answers);
    if (match.found()) {
      finish(round, match, std::move(decoded));
      return res;
    }
  }
  finish(config.rounds, match, std::move(decoded));
  return res;
}

std::vector<Exemplar> pick_exemplars(std::span<const corpus::KnowledgeRecord> universe,
                                     const corpus::KnowledgeRecord& query, int paraphrase_index,
                                     int count, std::uint64_t seed,
                                     const tinylm::Tokenizer& tokenizer) {
  std::vector<std::size_t> same, other;
  for (std::size_t i = 0; i < universe.size(); ++i) {
    const auto& r = universe[i];
    if (r.counterfactual || r.id == query.id) continue;
    (r.relation == query.relation ? same : other).push_back(i);
  }
  Rng rng(seed);
  std::shuffle(same.begin(), same.end(), rng);
  std::shuffle(other.begin(), other.end(), rng);
  same.insert(same.end(), other.begin(), other.end());

  std::vector<Exemplar> out;
  for (std::size_t i = 0; i < same.size() && static_cast<int>(out.size()) < count; ++i) {
    const auto& r = universe[same[i]];
    int pi = std::min<int>(paraphrase_index, static_cast<int>(r.paraphrases.size()) - 1);
    Exemplar ex;
    ex.question = tokenizer.tokenize(r.paraphrases[pi]);
    ex.answer = tokenizer.tokenize(r.aliases[0]);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace bprobe::baselines
