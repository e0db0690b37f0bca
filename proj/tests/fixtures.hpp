#pragma once

#include <cmath>
#include <functional>

#include "bprobe/baselines.hpp"
#include "bprobe/boundary.hpp"
#include "bprobe/checkpoint.hpp"
#include "bprobe/corpus.hpp"
#include "bprobe/losses.hpp"
#include "bprobe/pgdc.hpp"
#include "bprobe/tinylm.hpp"

namespace bprobe::test {

struct TestWorld {
  corpus::SyntheticWorld world;
  tinylm::Model model;
  double train_loss = 0.0;
};

// Small trained world shared across test cases; built once per binary.
inline const TestWorld& trained_world() {
  static TestWorld tw = [] {
    TestWorld t;
    corpus::WorldSpec spec;
    spec.entities = 12;
    spec.relations = 3;
    spec.facts = 30;
    spec.counterfactuals = 6;
    spec.objects_per_relation = 14;
    spec.seed = 7;
    t.world = corpus::generate_world(spec);
    auto sentences = corpus::render_training_corpus(t.world);
    std::vector<std::string> lines;
    for (auto& s : sentences) lines.push_back(s.text);
    t.model.tokenizer = tinylm::Tokenizer::build(lines, t.world.extra_vocab);
    tinylm::ModelConfig mc;
    mc.vocab_size = t.model.tokenizer.size();
    mc.seed = spec.seed;
    t.model.params = tinylm::init_params(mc);
    std::vector<tinylm::TokenSeq> corpus_ids;
    for (auto& l : lines) corpus_ids.push_back(t.model.tokenizer.tokenize(l));
    tinylm::TrainConfig tc;
    tc.epochs = 60;
    tc.seed = spec.seed;
    t.train_loss = tinylm::train(t.model.params, corpus_ids, tc).final_loss;
    return t;
  }();
  return tw;
}

// Small random-weight model for gradient checks (no training needed).
inline tinylm::Model random_model(int vocab = 23, std::uint64_t seed = 3) {
  tinylm::Model m;
  std::vector<std::string> words;
  for (int i = 0; i < vocab - 4; ++i) words.push_back("w" + std::to_string(i));
  m.tokenizer = tinylm::Tokenizer::build({}, words);
  tinylm::ModelConfig mc;
  mc.vocab_size = m.tokenizer.size();
  mc.d_model = 16;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.max_context = 24;
  mc.seed = seed;
  m.params = tinylm::init_params(mc);
  return m;
}

// Central finite differences of a scalar function of a matrix, one coordinate
// at a time, compared against the analytic gradient. Error is measured
// relative to the largest gradient magnitude of the instance.
inline double fd_max_rel_error(const std::function<double(const Mat&)>& f, const Mat& x0,
                               const Mat& analytic, double step = 1e-5) {
  Mat fd(x0.rows(), x0.cols());
  Mat x = x0;
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      double keep = x(i, j);
      x(i, j) = keep + step;
      double up = f(x);
      x(i, j) = keep - step;
      double down = f(x);
      x(i, j) = keep;
      fd(i, j) = (up - down) / (2.0 * step);
    }
  }
  double scale = std::max({analytic.array().abs().maxCoeff(), fd.array().abs().maxCoeff(), 1e-12});
  return ((fd - analytic).array().abs() / scale).maxCoeff();
}

inline std::vector<tinylm::TokenSeq> tokenize_aliases(const tinylm::Model& model,
                                                      const corpus::KnowledgeRecord& rec) {
  std::vector<tinylm::TokenSeq> answers;
  for (const auto& a : rec.aliases) answers.push_back(model.tokenizer.tokenize(a));
  return answers;
}

}  // namespace bprobe::test
