#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bprobe/common.hpp"
#include "bprobe/prompt.hpp"
#include "bprobe/tokenizer.hpp"

namespace bprobe::tinylm {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_context = 64;
  std::uint64_t seed = 0;
  bool tied_head = true;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
};

struct LayerParams {
  Vec ln1_g, ln1_b;
  Mat wq, wk, wv, wo;  // d_model x d_model, applied as y = x * W + b
  Vec bq, bk, bv, bo;
  Vec ln2_g, ln2_b;
  Mat w_fc, w_proj;  // d_model x d_ff, d_ff x d_model
  Vec b_fc, b_proj;
};

struct ModelParams {
  ModelConfig config;
  Mat embedding;      // vocab_size x d_model; row i is token i's embedding
  Mat pos_embedding;  // max_context x d_model, learned absolute positions
  std::vector<LayerParams> layers;
  Vec lnf_g, lnf_b;
  Mat head;  // vocab_size x d_model when untied; unused when tied

  const Mat& head_matrix() const { return config.tied_head ? embedding : head; }
  bool finite() const;
};

// Trained model bundle: weights plus the tokenizer they were trained with.
struct Model {
  ModelParams params;
  Tokenizer tokenizer;
};

ModelParams init_params(const ModelConfig& config);

// ---- forward / backward ----------------------------------------------------

struct LayerTrace {
  Mat x_in;                    // residual input
  Mat ln1_xhat, ln2_xhat;      // normalized activations
  Vec ln1_istd, ln2_istd;      // per-row 1/sqrt(var+eps)
  Mat q, k, v;                 // T x d_model
  std::vector<Mat> attn_probs;  // per head, T x T
  Mat attn_ctx;                // concatenated head outputs, T x d_model
  Mat x_mid;                   // after attention residual
  Mat fc_pre;                  // T x d_ff before activation
  Mat fc_act;                  // T x d_ff after gelu
};

struct ForwardTrace {
  Mat input;  // token+position embeddings fed to layer 0
  std::vector<LayerTrace> layers;
  Mat lnf_xhat;
  Vec lnf_istd;
  Mat final_hidden;  // post final layernorm, the LM-head input
};

struct ForwardResult {
  Mat logits;                     // T x vocab (or rows(logit_rows) x vocab)
  Mat final_hidden;               // T x d_model
  std::vector<Mat> layer_hidden;  // per-layer residual-stream outputs
};

// Full-fidelity forward over raw input embeddings (positions added inside).
ForwardResult forward(const ModelParams& params, const Mat& input_embeddings);
// Convenience id path; bit-identical to embedding the ids and calling forward.
ForwardResult forward_ids(const ModelParams& params, std::span<const int> ids);

Mat embed_ids(const ModelParams& params, std::span<const int> ids);

// Hot path: logits only at the requested rows (empty -> no logits), optional
// trace for a later backward pass.
Mat forward_rows(const ModelParams& params, const Mat& input_embeddings,
                 std::span<const int> logit_rows, ForwardTrace* trace);

// Upstream gradients for backward: sparse logits rows, gradient injected at
// the final-hidden rows, and a direct input-space term.
struct BackwardSeeds {
  std::vector<std::pair<int, Vec>> d_logit_rows;
  std::vector<std::pair<int, Vec>> d_final_hidden_rows;
  Mat d_input_direct;  // optional, T x d_model
};

struct ParamGrads;

// Returns d(loss)/d(input embeddings); accumulates into *param_grads when given.
Mat backward(const ModelParams& params, const ForwardTrace& trace, const BackwardSeeds& seeds,
             ParamGrads* param_grads = nullptr);

// Reverse-mode gradient of a scalar functional of the forward outputs (and
// optionally of the raw input) with respect to every input coordinate.
struct LossFunctional {
  double value = 0.0;
  BackwardSeeds seeds;
};
Mat grad_wrt_input(const ModelParams& params, const Mat& input_embeddings,
                   const std::function<LossFunctional(const ForwardResult&)>& functional,
                   double* loss_out = nullptr);

Vec softmax(const Vec& logits);

// ---- decoding and representations -------------------------------------------

Mat embed_prompt(const ModelParams& params, const PromptState& prompt);

TokenSeq greedy_decode(const Model& model, const PromptState& prompt, int m);
std::vector<int> greedy_decode_ids(const ModelParams& params, const Mat& prompt_embeddings, int m);

// Last-layer hidden state at a trailing <eos> appended to the prompt.
Vec hidden_repr(const ModelParams& params, const PromptState& prompt);
Vec hidden_repr_emb(const ModelParams& params, const Mat& prompt_embeddings,
                    ForwardTrace* trace = nullptr);

// ---- training ----------------------------------------------------------------

struct TrainConfig {
  int epochs = 40;
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;        // global L2 cap; <= 0 disables
  double final_lr_fraction = 0.1;  // linear decay endpoint
  bool pack_rows = true;  // additionally pack sentences into long rows
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct TrainStats {
  double final_loss = 0.0;  // nats/token over the last epoch
  double final_perplexity = 0.0;
  int epochs_run = 0;
};

struct ParamGrads {
  Mat embedding, pos_embedding;
  std::vector<LayerParams> layers;
  Vec lnf_g, lnf_b;
  Mat head;
  static ParamGrads zeros_like(const ModelParams& p);
  void clear();
};

// Next-token cross-entropy training over sentences packed into
// max_context-length rows (reshuffled every epoch). Mutates params.
TrainStats train(ModelParams& params, std::span<const TokenSeq> corpus, const TrainConfig& config);

// Single packed row: mean next-token NLL and parameter gradients.
double row_loss_and_grads(const ModelParams& params, std::span<const int> row, ParamGrads& grads);

}  // namespace bprobe::tinylm
