#include <doctest.h>

#include <cstring>

#include "fixtures.hpp"

using namespace bprobe;
using namespace bprobe::tinylm;

namespace {

bool same_bits(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_CASE("config invariants are enforced") {
  ModelConfig c;
  c.vocab_size = 10;
  c.d_model = 10;
  c.n_heads = 4;
  CHECK_THROWS_AS(c.validate(), DataError);
  c.d_model = 8;
  c.max_context = 1;
  CHECK_THROWS_AS(c.validate(), DataError);
  c.max_context = 8;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("forward rejects empty and oversized inputs") {
  Model m = test::random_model();
  Mat empty(0, m.params.config.d_model);
  CHECK_THROWS_AS(forward(m.params, empty), DataError);
  Mat too_long = Mat::Zero(m.params.config.max_context + 1, m.params.config.d_model);
  CHECK_THROWS_AS(forward(m.params, too_long), DataError);
}

TEST_CASE("softmax rows of forward logits sum to one") {
  Model m = test::random_model();
  std::vector<int> ids = {Tokenizer::kBos, 5, 9, 4, 7};
  auto res = forward_ids(m.params, ids);
  for (int i = 0; i < res.logits.rows(); ++i) {
    Vec p = softmax(res.logits.row(i).transpose());
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    CHECK((p.array() >= 0).all());
  }
}

TEST_CASE("id path and embedding path produce bit-identical outputs") {
  Model m = test::random_model();
  std::vector<int> ids = {Tokenizer::kBos, 4, 8, 15, 16};
  auto via_ids = forward_ids(m.params, ids);
  auto via_emb = forward(m.params, embed_ids(m.params, ids));
  CHECK(same_bits(via_ids.logits, via_emb.logits));
  CHECK(same_bits(via_ids.final_hidden, via_emb.final_hidden));
}

TEST_CASE("forward is deterministic and exposes per-layer hidden states") {
  Model m = test::random_model();
  std::vector<int> ids = {Tokenizer::kBos, 6, 6, 12};
  auto a = forward_ids(m.params, ids);
  auto b = forward_ids(m.params, ids);
  CHECK(same_bits(a.logits, b.logits));
  REQUIRE(a.layer_hidden.size() == static_cast<std::size_t>(m.params.config.n_layers));
  for (const auto& h : a.layer_hidden) CHECK(h.allFinite());
}

TEST_CASE("grad_wrt_input: constant loss gives zero gradient") {
  Model m = test::random_model();
  Mat x = embed_ids(m.params, std::vector<int>{1, 5, 9});
  Mat g = grad_wrt_input(m.params, x, [](const ForwardResult&) {
    LossFunctional lf;
    lf.value = 42.0;
    return lf;
  });
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad_wrt_input: sum of input coordinates gives all-ones") {
  Model m = test::random_model();
  Mat x = embed_ids(m.params, std::vector<int>{1, 5, 9});
  Mat g = grad_wrt_input(m.params, x, [&](const ForwardResult&) {
    LossFunctional lf;
    lf.value = x.sum();
    lf.seeds.d_input_direct = Mat::Ones(x.rows(), x.cols());
    return lf;
  });
  CHECK((g.array() == 1.0).all());
}

TEST_CASE("grad_wrt_input matches central finite differences through the full stack") {
  Model m = test::random_model();
  std::vector<int> ids = {Tokenizer::kBos, 7, 11, 3};
  Mat x0 = embed_ids(m.params, ids);
  // loss mixes logits (cross entropy at two positions) and the final hidden state
  auto functional = [&](const ForwardResult& r) {
    LossFunctional lf;
    Vec p1 = softmax(r.logits.row(1).transpose());
    Vec p2 = softmax(r.logits.row(2).transpose());
    lf.value = -std::log(p1[5]) - std::log(p2[9]) + 0.5 * r.final_hidden.row(3).squaredNorm();
    Vec d1 = p1;
    d1[5] -= 1.0;
    Vec d2 = p2;
    d2[9] -= 1.0;
    lf.seeds.d_logit_rows.emplace_back(1, d1);
    lf.seeds.d_logit_rows.emplace_back(2, d2);
    lf.seeds.d_final_hidden_rows.emplace_back(3, r.final_hidden.row(3).transpose());
    return lf;
  };
  Mat analytic = grad_wrt_input(m.params, x0, functional);
  auto value = [&](const Mat& x) {
    double v = 0.0;
    grad_wrt_input(m.params, x, functional, &v);
    return v;
  };
  CHECK(test::fd_max_rel_error(value, x0, analytic) < 1e-5);
}

TEST_CASE("parameter gradients match finite differences on a training row") {
  Model m = test::random_model(19, 5);
  std::vector<int> row = {Tokenizer::kBos, 4, 9, 14, 6, Tokenizer::kEos};
  ParamGrads grads = ParamGrads::zeros_like(m.params);
  row_loss_and_grads(m.params, row, grads);

  auto loss_of = [&](const ModelParams& p) {
    ParamGrads scratch = ParamGrads::zeros_like(p);
    return row_loss_and_grads(p, row, scratch);
  };
  struct Spot {
    const char* name;
    double* param;
    double analytic;
  };
  auto& l0 = m.params.layers[0];
  auto& g0 = grads.layers[0];
  std::vector<Spot> spots = {
      {"embedding", &m.params.embedding(4, 3), grads.embedding(4, 3)},
      {"pos", &m.params.pos_embedding(2, 7), grads.pos_embedding(2, 7)},
      {"wq", &l0.wq(3, 5), g0.wq(3, 5)},
      {"wk", &l0.wk(1, 2), g0.wk(1, 2)},
      {"wv", &l0.wv(0, 9), g0.wv(0, 9)},
      {"wo", &l0.wo(8, 8), g0.wo(8, 8)},
      {"w_fc", &l0.w_fc(5, 20), g0.w_fc(5, 20)},
      {"w_proj", &l0.w_proj(17, 4), g0.w_proj(17, 4)},
      {"ln1_g", &l0.ln1_g(6), g0.ln1_g(6)},
      {"ln2_b", &l0.ln2_b(11), g0.ln2_b(11)},
      {"lnf_g", &m.params.lnf_g(0), grads.lnf_g(0)},
      {"bq", &l0.bq(4), g0.bq(4)},
      {"b_fc", &l0.b_fc(13), g0.b_fc(13)},
  };
  const double h = 1e-6;
  for (const auto& s : spots) {
    CAPTURE(s.name);
    double keep = *s.param;
    *s.param = keep + h;
    double up = loss_of(m.params);
    *s.param = keep - h;
    double down = loss_of(m.params);
    *s.param = keep;
    double fd = (up - down) / (2.0 * h);
    CHECK(std::abs(fd - s.analytic) < 1e-5 * std::max({1.0, std::abs(fd), std::abs(s.analytic)}));
  }
}

TEST_CASE("greedy decode: single step, determinism, bounds") {
  const auto& tw = test::trained_world();
  const auto& model = tw.model;
  auto prompt = PromptState::from_ids(
      pgdc::prompt_ids_for_question(model.tokenizer.tokenize(tw.world.training_prompts[0]).ids));

  // one step equals the argmax of the next-token distribution
  Mat x = embed_prompt(model.params, prompt);
  int last = prompt.size() - 1;
  Mat logits = forward_rows(model.params, x, std::span<const int>(&last, 1), nullptr);
  auto one = greedy_decode_ids(model.params, x, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == argmax_lowest(logits.row(0).transpose()));

  auto a = greedy_decode(model, prompt, 8);
  auto b = greedy_decode(model, prompt, 8);
  CHECK(a.ids == b.ids);
  CHECK(a.text == b.text);

  CHECK_THROWS_AS(greedy_decode(model, prompt, 0), DataError);
  CHECK_THROWS_AS(greedy_decode(model, prompt, model.params.config.max_context), DataError);
}

TEST_CASE("argmax breaks ties toward the lowest id") {
  Vec v(5);
  v << 1.0, 3.0, 3.0, 2.0, 3.0;
  CHECK(argmax_lowest(v) == 1);
}

TEST_CASE("hidden_repr is deterministic, shaped, and order-sensitive") {
  const auto& tw = test::trained_world();
  const auto& model = tw.model;

  auto bos_only = PromptState::from_ids(std::vector<int>{Tokenizer::kBos});
  Vec h = hidden_repr(model.params, bos_only);
  CHECK(h.size() == model.params.config.d_model);
  CHECK(h.allFinite());

  auto ids = model.tokenizer.tokenize(tw.world.training_prompts[0]).ids;
  REQUIRE(ids.size() >= 2);
  auto p1 = PromptState::from_ids(std::vector<int>{ids[0], ids[1]});
  auto p2 = PromptState::from_ids(std::vector<int>{ids[1], ids[0]});
  Vec h1a = hidden_repr(model.params, p1);
  Vec h1b = hidden_repr(model.params, p1);
  Vec h2 = hidden_repr(model.params, p2);
  CHECK((h1a - h1b).norm() == 0.0);
  CHECK((h1a - h2).norm() > 1e-8);  // learned positions make order matter
}

TEST_CASE("training: zero epochs leave parameters untouched") {
  Model m = test::random_model();
  Mat before = m.params.embedding;
  std::vector<TokenSeq> corpus = {m.tokenizer.tokenize("w1 w2 w3")};
  TrainConfig tc;
  tc.epochs = 0;
  auto stats = train(m.params, corpus, tc);
  CHECK(stats.epochs_run == 0);
  CHECK(same_bits(before, m.params.embedding));
}

TEST_CASE("training memorizes a single sentence to under 0.05 nats per token") {
  std::vector<std::string> lines = {"the capital of velka is dorgrad"};
  Model m;
  m.tokenizer = Tokenizer::build(lines);
  ModelConfig mc;
  mc.vocab_size = m.tokenizer.size();
  mc.d_model = 32;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.d_ff = 64;
  mc.max_context = 16;
  mc.seed = 1;
  m.params = init_params(mc);
  std::vector<TokenSeq> corpus = {m.tokenizer.tokenize(lines[0])};
  TrainConfig tc;
  tc.epochs = 300;
  tc.seed = 1;
  auto stats = train(m.params, corpus, tc);
  CHECK(stats.final_loss < 0.05);
  CHECK(stats.final_perplexity < std::exp(0.05) + 1e-9);

  // its own sentence decodes greedily from the cloze prefix
  auto prompt = PromptState::from_ids(
      pgdc::prompt_ids_for_question(m.tokenizer.tokenize("the capital of velka is").ids));
  auto out = greedy_decode(m, prompt, 1);
  CHECK(out.ids[0] == m.tokenizer.id("dorgrad"));
}

TEST_CASE("training rejects empty corpora and oversized sentences") {
  Model m = test::random_model();
  std::vector<TokenSeq> empty;
  TrainConfig tc;
  CHECK_THROWS_AS(train(m.params, empty, tc), DataError);
  TokenSeq too_long;
  too_long.text = "x";
  too_long.ids.assign(m.params.config.max_context, 5);
  std::vector<TokenSeq> corpus = {too_long};
  CHECK_THROWS_AS(train(m.params, corpus, tc), DataError);
}

TEST_CASE("planted facts are greedily decodable from their training templates") {
  const auto& tw = test::trained_world();
  int recovered = 0;
  for (std::size_t i = 0; i < tw.world.facts.size(); ++i) {
    auto q = tw.model.tokenizer.tokenize(tw.world.training_prompts[i]);
    auto answers = test::tokenize_aliases(tw.model, tw.world.facts[i]);
    if (baselines::zero_shot_probe(tw.model, q, answers, 10)) ++recovered;
  }
  CHECK(recovered >= static_cast<int>(0.95 * tw.world.facts.size()));
}

TEST_CASE("hidden states stay finite on a trained checkpoint") {
  const auto& tw = test::trained_world();
  auto ids = pgdc::prompt_ids_for_question(
      tw.model.tokenizer.tokenize(tw.world.facts[0].paraphrases[0]).ids);
  auto res = forward_ids(tw.model.params, ids);
  CHECK(res.logits.allFinite());
  CHECK(res.final_hidden.allFinite());
}
