#include "bprobe/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace bprobe::tinylm {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kMaskValue = -1e30;
constexpr double kProbFloor = 1e-300;

double gelu(double x) {
  const double k = std::sqrt(2.0 / M_PI);
  double u = k * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double k = std::sqrt(2.0 / M_PI);
  double u = k * (x + 0.044715 * x * x * x);
  double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x);
}

// y = gamma .* xhat + beta, rowwise stats; xhat and 1/std recorded for backward.
Mat layernorm(const Mat& x, const Vec& gamma, const Vec& beta, Mat& xhat_out, Vec& istd_out) {
  const int t = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  xhat_out.resize(t, d);
  istd_out.resize(t);
  Mat y(t, d);
  for (int i = 0; i < t; ++i) {
    double mean = x.row(i).mean();
    double var = (x.row(i).array() - mean).square().sum() / d;
    double istd = 1.0 / std::sqrt(var + kLnEps);
    istd_out[i] = istd;
    xhat_out.row(i) = (x.row(i).array() - mean) * istd;
    y.row(i) = xhat_out.row(i).array() * gamma.transpose().array() + beta.transpose().array();
  }
  return y;
}

Mat layernorm_backward(const Mat& dy, const Mat& xhat, const Vec& istd, const Vec& gamma,
                       Vec* dgamma, Vec* dbeta) {
  const int t = static_cast<int>(dy.rows());
  const int d = static_cast<int>(dy.cols());
  if (dgamma) {
    *dgamma += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
    *dbeta += dy.colwise().sum().transpose();
  }
  Mat dx(t, d);
  for (int i = 0; i < t; ++i) {
    Eigen::RowVectorXd dxhat = dy.row(i).array() * gamma.transpose().array();
    double s1 = dxhat.sum();
    double s2 = (dxhat.array() * xhat.row(i).array()).sum();
    dx.row(i) = (istd[i] / d) * (d * dxhat.array() - s1 - xhat.row(i).array() * s2);
  }
  return dx;
}

void softmax_rows_causal(Mat& scores) {
  const int t = static_cast<int>(scores.rows());
  for (int i = 0; i < t; ++i) {
    for (int j = i + 1; j < t; ++j) scores(i, j) = kMaskValue;
    double mx = scores.row(i).head(i + 1).maxCoeff();
    scores.row(i) = (scores.row(i).array() - mx).exp();
    scores.row(i) /= scores.row(i).sum();
  }
}

void check_input(const ModelParams& params, const Mat& input) {
  if (input.rows() == 0) throw DataError("forward: empty input");
  if (input.cols() != params.config.d_model) throw DataError("forward: input width != d_model");
  if (input.rows() > params.config.max_context)
    throw DataError("forward: sequence length " + std::to_string(input.rows()) +
                    " exceeds max_context " + std::to_string(params.config.max_context));
}

struct AdamState {
  ParamGrads m, v;
  long t = 0;
};

template <typename F>
void visit_params(ModelParams& p, ParamGrads& g, ParamGrads& m, ParamGrads& v, F&& f) {
  f(p.embedding, g.embedding, m.embedding, v.embedding);
  f(p.pos_embedding, g.pos_embedding, m.pos_embedding, v.pos_embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& pl = p.layers[l];
    auto& gl = g.layers[l];
    auto& ml = m.layers[l];
    auto& vl = v.layers[l];
    f(pl.ln1_g, gl.ln1_g, ml.ln1_g, vl.ln1_g);
    f(pl.ln1_b, gl.ln1_b, ml.ln1_b, vl.ln1_b);
    f(pl.wq, gl.wq, ml.wq, vl.wq);
    f(pl.bq, gl.bq, ml.bq, vl.bq);
    f(pl.wk, gl.wk, ml.wk, vl.wk);
    f(pl.bk, gl.bk, ml.bk, vl.bk);
    f(pl.wv, gl.wv, ml.wv, vl.wv);
    f(pl.bv, gl.bv, ml.bv, vl.bv);
    f(pl.wo, gl.wo, ml.wo, vl.wo);
    f(pl.bo, gl.bo, ml.bo, vl.bo);
    f(pl.ln2_g, gl.ln2_g, ml.ln2_g, vl.ln2_g);
    f(pl.ln2_b, gl.ln2_b, ml.ln2_b, vl.ln2_b);
    f(pl.w_fc, gl.w_fc, ml.w_fc, vl.w_fc);
    f(pl.b_fc, gl.b_fc, ml.b_fc, vl.b_fc);
    f(pl.w_proj, gl.w_proj, ml.w_proj, vl.w_proj);
    f(pl.b_proj, gl.b_proj, ml.b_proj, vl.b_proj);
  }
  f(p.lnf_g, g.lnf_g, m.lnf_g, v.lnf_g);
  f(p.lnf_b, g.lnf_b, m.lnf_b, v.lnf_b);
  if (!p.config.tied_head) f(p.head, g.head, m.head, v.head);
}

void clip_grads(ModelParams& params, ParamGrads& grads, AdamState& state, double max_norm) {
  double sq = 0.0;
  visit_params(params, grads, state.m, state.v,
               [&](auto&, auto& g, auto&, auto&) { sq += g.array().square().sum(); });
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double scale = max_norm / norm;
    visit_params(params, grads, state.m, state.v, [&](auto&, auto& g, auto&, auto&) { g *= scale; });
  }
}

void adam_step(ModelParams& params, ParamGrads& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  state.t += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  visit_params(params, grads, state.m, state.v, [&](auto& p, auto& g, auto& m, auto& v) {
    m = beta1 * m + (1.0 - beta1) * g;
    v.array() = beta2 * v.array() + (1.0 - beta2) * g.array().square();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  });
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 4) throw DataError("config: vocab_size must cover the special tokens");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
    throw DataError("config: dimensions must be positive");
  if (d_model % n_heads != 0) throw DataError("config: d_model must be divisible by n_heads");
  if (max_context < 2) throw DataError("config: max_context must be at least 2");
}

bool ModelParams::finite() const {
  auto ok = [](const Mat& m) { return m.size() == 0 || m.allFinite(); };
  auto okv = [](const Vec& v) { return v.size() == 0 || v.allFinite(); };
  if (!ok(embedding) || !ok(pos_embedding) || !okv(lnf_g) || !okv(lnf_b) || !ok(head)) return false;
  for (const auto& l : layers) {
    if (!okv(l.ln1_g) || !okv(l.ln1_b) || !ok(l.wq) || !ok(l.wk) || !ok(l.wv) || !ok(l.wo) ||
        !okv(l.bq) || !okv(l.bk) || !okv(l.bv) || !okv(l.bo) || !okv(l.ln2_g) || !okv(l.ln2_b) ||
        !ok(l.w_fc) || !ok(l.w_proj) || !okv(l.b_fc) || !okv(l.b_proj))
      return false;
  }
  return true;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(config.seed);
  std::normal_distribution<double> dist(0.0, 0.08);
  auto fill = [&](Mat& m, int r, int c) {
    m.resize(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = dist(rng);
  };
  fill(p.embedding, config.vocab_size, config.d_model);
  fill(p.pos_embedding, config.max_context, config.d_model);
  p.layers.resize(config.n_layers);
  for (auto& l : p.layers) {
    l.ln1_g = Vec::Ones(config.d_model);
    l.ln1_b = Vec::Zero(config.d_model);
    fill(l.wq, config.d_model, config.d_model);
    fill(l.wk, config.d_model, config.d_model);
    fill(l.wv, config.d_model, config.d_model);
    fill(l.wo, config.d_model, config.d_model);
    l.bq = Vec::Zero(config.d_model);
    l.bk = Vec::Zero(config.d_model);
    l.bv = Vec::Zero(config.d_model);
    l.bo = Vec::Zero(config.d_model);
    l.ln2_g = Vec::Ones(config.d_model);
    l.ln2_b = Vec::Zero(config.d_model);
    fill(l.w_fc, config.d_model, config.d_ff);
    fill(l.w_proj, config.d_ff, config.d_model);
    l.b_fc = Vec::Zero(config.d_ff);
    l.b_proj = Vec::Zero(config.d_model);
  }
  p.lnf_g = Vec::Ones(config.d_model);
  p.lnf_b = Vec::Zero(config.d_model);
  if (!config.tied_head) fill(p.head, config.vocab_size, config.d_model);
  return p;
}

ParamGrads ParamGrads::zeros_like(const ModelParams& p) {
  ParamGrads g;
  g.embedding = Mat::Zero(p.embedding.rows(), p.embedding.cols());
  g.pos_embedding = Mat::Zero(p.pos_embedding.rows(), p.pos_embedding.cols());
  g.layers.resize(p.layers.size());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& l = p.layers[i];
    auto& o = g.layers[i];
    o.ln1_g = Vec::Zero(l.ln1_g.size());
    o.ln1_b = Vec::Zero(l.ln1_b.size());
    o.wq = Mat::Zero(l.wq.rows(), l.wq.cols());
    o.wk = Mat::Zero(l.wk.rows(), l.wk.cols());
    o.wv = Mat::Zero(l.wv.rows(), l.wv.cols());
    o.wo = Mat::Zero(l.wo.rows(), l.wo.cols());
    o.bq = Vec::Zero(l.bq.size());
    o.bk = Vec::Zero(l.bk.size());
    o.bv = Vec::Zero(l.bv.size());
    o.bo = Vec::Zero(l.bo.size());
    o.ln2_g = Vec::Zero(l.ln2_g.size());
    o.ln2_b = Vec::Zero(l.ln2_b.size());
    o.w_fc = Mat::Zero(l.w_fc.rows(), l.w_fc.cols());
    o.w_proj = Mat::Zero(l.w_proj.rows(), l.w_proj.cols());
    o.b_fc = Vec::Zero(l.b_fc.size());
    o.b_proj = Vec::Zero(l.b_proj.size());
  }
  g.lnf_g = Vec::Zero(p.lnf_g.size());
  g.lnf_b = Vec::Zero(p.lnf_b.size());
  if (!p.config.tied_head) g.head = Mat::Zero(p.head.rows(), p.head.cols());
  return g;
}

void ParamGrads::clear() {
  auto z = [](Mat& m) { m.setZero(); };
  auto zv = [](Vec& v) { v.setZero(); };
  z(embedding);
  z(pos_embedding);
  for (auto& l : layers) {
    zv(l.ln1_g);
    zv(l.ln1_b);
    z(l.wq);
    z(l.wk);
    z(l.wv);
    z(l.wo);
    zv(l.bq);
    zv(l.bk);
    zv(l.bv);
    zv(l.bo);
    zv(l.ln2_g);
    zv(l.ln2_b);
    z(l.w_fc);
    z(l.w_proj);
    zv(l.b_fc);
    zv(l.b_proj);
  }
  zv(lnf_g);
  zv(lnf_b);
  if (head.size()) z(head);
}

Vec softmax(const Vec& logits) {
  double mx = logits[0];
  for (int i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  Vec p = (logits.array() - mx).exp();
  double sum = p.sum();
  return p / sum;
}

Mat forward_rows(const ModelParams& params, const Mat& input, std::span<const int> logit_rows,
                 ForwardTrace* trace) {
  check_input(params, input);
  const auto& cfg = params.config;
  const int t = static_cast<int>(input.rows());
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Mat x = input + params.pos_embedding.topRows(t);
  if (trace) {
    trace->input = x;
    trace->layers.resize(cfg.n_layers);
  }

  for (int li = 0; li < cfg.n_layers; ++li) {
    const auto& l = params.layers[li];
    LayerTrace scratch;
    LayerTrace& lt = trace ? trace->layers[li] : scratch;
    lt.x_in = x;

    Mat a = layernorm(x, l.ln1_g, l.ln1_b, lt.ln1_xhat, lt.ln1_istd);
    lt.q = a * l.wq;
    lt.q.rowwise() += l.bq.transpose();
    lt.k = a * l.wk;
    lt.k.rowwise() += l.bk.transpose();
    lt.v = a * l.wv;
    lt.v.rowwise() += l.bv.transpose();

    lt.attn_probs.resize(cfg.n_heads);
    lt.attn_ctx.resize(t, cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto qh = lt.q.middleCols(h * hd, hd);
      auto kh = lt.k.middleCols(h * hd, hd);
      auto vh = lt.v.middleCols(h * hd, hd);
      Mat s = qh * kh.transpose() * scale;
      softmax_rows_causal(s);
      lt.attn_ctx.middleCols(h * hd, hd).noalias() = s * vh;
      lt.attn_probs[h] = std::move(s);
    }
    Mat o = lt.attn_ctx * l.wo;
    o.rowwise() += l.bo.transpose();
    lt.x_mid = x + o;

    Mat b = layernorm(lt.x_mid, l.ln2_g, l.ln2_b, lt.ln2_xhat, lt.ln2_istd);
    lt.fc_pre = b * l.w_fc;
    lt.fc_pre.rowwise() += l.b_fc.transpose();
    lt.fc_act = lt.fc_pre.unaryExpr([](double v) { return gelu(v); });
    Mat m = lt.fc_act * l.w_proj;
    m.rowwise() += l.b_proj.transpose();
    x = lt.x_mid + m;
  }

  Mat lnf_xhat;
  Vec lnf_istd;
  Mat h = layernorm(x, params.lnf_g, params.lnf_b, lnf_xhat, lnf_istd);
  if (trace) {
    trace->lnf_xhat = std::move(lnf_xhat);
    trace->lnf_istd = std::move(lnf_istd);
    trace->final_hidden = h;
  }

  const Mat& w_head = params.head_matrix();
  Mat logits(static_cast<int>(logit_rows.size()), cfg.vocab_size);
  for (std::size_t i = 0; i < logit_rows.size(); ++i) {
    int r = logit_rows[i];
    if (r < 0 || r >= t) throw DataError("forward: logit row out of range");
    logits.row(static_cast<int>(i)).noalias() = h.row(r) * w_head.transpose();
  }
  return logits;
}

ForwardResult forward(const ModelParams& params, const Mat& input) {
  const int t = static_cast<int>(input.rows());
  std::vector<int> rows(t);
  std::iota(rows.begin(), rows.end(), 0);
  ForwardTrace trace;
  ForwardResult r;
  r.logits = forward_rows(params, input, rows, &trace);
  r.final_hidden = trace.final_hidden;
  r.layer_hidden.reserve(trace.layers.size());
  for (std::size_t i = 1; i < trace.layers.size(); ++i) r.layer_hidden.push_back(trace.layers[i].x_in);
  // last layer output is the pre-layernorm residual stream; recover it from the trace
  if (!trace.layers.empty()) {
    const auto& last = trace.layers.back();
    Mat m = last.fc_act * params.layers.back().w_proj;
    m.rowwise() += params.layers.back().b_proj.transpose();
    r.layer_hidden.push_back(last.x_mid + m);
  }
  return r;
}

Mat embed_ids(const ModelParams& params, std::span<const int> ids) {
  Mat x(static_cast<int>(ids.size()), params.config.d_model);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= params.config.vocab_size) throw DataError("embed: token id out of range");
    x.row(static_cast<int>(i)) = params.embedding.row(id);
  }
  return x;
}

ForwardResult forward_ids(const ModelParams& params, std::span<const int> ids) {
  return forward(params, embed_ids(params, ids));
}

Mat embed_prompt(const ModelParams& params, const PromptState& prompt) {
  return prompt.materialize(params.embedding);
}

Mat backward(const ModelParams& params, const ForwardTrace& trace, const BackwardSeeds& seeds,
             ParamGrads* pg) {
  const auto& cfg = params.config;
  const int t = static_cast<int>(trace.input.rows());
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Mat& w_head = params.head_matrix();

  Mat dh = Mat::Zero(t, cfg.d_model);
  for (const auto& [row, dl] : seeds.d_logit_rows) {
    dh.row(row).noalias() += dl.transpose() * w_head;
    if (pg) {
      Mat& hg = cfg.tied_head ? pg->embedding : pg->head;
      hg.noalias() += dl * trace.final_hidden.row(row);
    }
  }
  for (const auto& [row, dv] : seeds.d_final_hidden_rows) dh.row(row) += dv.transpose();

  Mat dx = layernorm_backward(dh, trace.lnf_xhat, trace.lnf_istd, params.lnf_g,
                              pg ? &pg->lnf_g : nullptr, pg ? &pg->lnf_b : nullptr);

  for (int li = cfg.n_layers - 1; li >= 0; --li) {
    const auto& l = params.layers[li];
    const auto& lt = trace.layers[li];
    LayerParams* gl = pg ? &pg->layers[li] : nullptr;

    // MLP block
    Mat df = dx * l.w_proj.transpose();
    if (gl) {
      gl->w_proj.noalias() += lt.fc_act.transpose() * dx;
      gl->b_proj += dx.colwise().sum().transpose();
    }
    Mat dfc_pre =
        df.array() * lt.fc_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    Mat db = dfc_pre * l.w_fc.transpose();
    if (gl) {
      Mat b = lt.ln2_xhat.array().rowwise() * l.ln2_g.transpose().array();
      b.rowwise() += l.ln2_b.transpose();
      gl->w_fc.noalias() += b.transpose() * dfc_pre;
      gl->b_fc += dfc_pre.colwise().sum().transpose();
    }
    Mat dx_mid = dx + layernorm_backward(db, lt.ln2_xhat, lt.ln2_istd, l.ln2_g,
                                         gl ? &gl->ln2_g : nullptr, gl ? &gl->ln2_b : nullptr);

    // attention block
    Mat dctx = dx_mid * l.wo.transpose();
    if (gl) {
      gl->wo.noalias() += lt.attn_ctx.transpose() * dx_mid;
      gl->bo += dx_mid.colwise().sum().transpose();
    }
    Mat dq = Mat::Zero(t, cfg.d_model);
    Mat dk = Mat::Zero(t, cfg.d_model);
    Mat dv = Mat::Zero(t, cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Mat& p = lt.attn_probs[h];
      auto vh = lt.v.middleCols(h * hd, hd);
      auto qh = lt.q.middleCols(h * hd, hd);
      auto kh = lt.k.middleCols(h * hd, hd);
      auto dch = dctx.middleCols(h * hd, hd);
      Mat dp = dch * vh.transpose();
      dv.middleCols(h * hd, hd).noalias() = p.transpose() * dch;
      Vec rowdot = (dp.array() * p.array()).rowwise().sum();
      Mat ds = p.array() * (dp.array().colwise() - rowdot.array());
      ds *= scale;
      dq.middleCols(h * hd, hd).noalias() = ds * kh;
      dk.middleCols(h * hd, hd).noalias() = ds.transpose() * qh;
    }
    Mat da = dq * l.wq.transpose() + dk * l.wk.transpose() + dv * l.wv.transpose();
    if (gl) {
      Mat a = lt.ln1_xhat.array().rowwise() * l.ln1_g.transpose().array();
      a.rowwise() += l.ln1_b.transpose();
      gl->wq.noalias() += a.transpose() * dq;
      gl->wk.noalias() += a.transpose() * dk;
      gl->wv.noalias() += a.transpose() * dv;
      gl->bq += dq.colwise().sum().transpose();
      gl->bk += dk.colwise().sum().transpose();
      gl->bv += dv.colwise().sum().transpose();
    }
    dx = dx_mid + layernorm_backward(da, lt.ln1_xhat, lt.ln1_istd, l.ln1_g,
                                     gl ? &gl->ln1_g : nullptr, gl ? &gl->ln1_b : nullptr);
  }

  if (pg) pg->pos_embedding.topRows(t) += dx;
  if (seeds.d_input_direct.size()) dx += seeds.d_input_direct;
  return dx;
}

Mat grad_wrt_input(const ModelParams& params, const Mat& input,
                   const std::function<LossFunctional(const ForwardResult&)>& functional,
                   double* loss_out) {
  const int t = static_cast<int>(input.rows());
  std::vector<int> rows(t);
  std::iota(rows.begin(), rows.end(), 0);
  ForwardTrace trace;
  ForwardResult res;
  res.logits = forward_rows(params, input, rows, &trace);
  res.final_hidden = trace.final_hidden;
  LossFunctional lf = functional(res);
  if (!std::isfinite(lf.value)) throw NumericError("grad_wrt_input: non-finite loss");
  if (loss_out) *loss_out = lf.value;
  return backward(params, trace, lf.seeds, nullptr);
}

std::vector<int> greedy_decode_ids(const ModelParams& params, const Mat& prompt_embeddings, int m) {
  if (m < 1) throw DataError("greedy_decode: m must be >= 1");
  const int n = static_cast<int>(prompt_embeddings.rows());
  if (n == 0) throw DataError("greedy_decode: empty prompt");
  if (n + m > params.config.max_context)
    throw DataError("greedy_decode: prompt plus horizon exceeds max_context");
  std::vector<int> out;
  out.reserve(m);
  Mat seq(n + m - 1, params.config.d_model);
  seq.topRows(n) = prompt_embeddings;
  for (int i = 0; i < m; ++i) {
    int len = n + i;
    int last = len - 1;
    Mat logits = forward_rows(params, seq.topRows(len), std::span<const int>(&last, 1), nullptr);
    int next = argmax_lowest(logits.row(0).transpose());
    out.push_back(next);
    if (len < seq.rows()) seq.row(len) = params.embedding.row(next);
  }
  return out;
}

TokenSeq greedy_decode(const Model& model, const PromptState& prompt, int m) {
  Mat x = embed_prompt(model.params, prompt);
  TokenSeq seq;
  seq.ids = greedy_decode_ids(model.params, x, m);
  seq.text = model.tokenizer.detokenize(seq.ids);
  return seq;
}

Vec hidden_repr_emb(const ModelParams& params, const Mat& prompt_embeddings, ForwardTrace* trace) {
  const int n = static_cast<int>(prompt_embeddings.rows());
  if (n + 1 > params.config.max_context)
    throw DataError("hidden_repr: prompt plus <eos> exceeds max_context");
  Mat x(n + 1, params.config.d_model);
  x.topRows(n) = prompt_embeddings;
  x.row(n) = params.embedding.row(Tokenizer::kEos);
  ForwardTrace local;
  ForwardTrace* tr = trace ? trace : &local;
  forward_rows(params, x, {}, tr);
  return tr->final_hidden.row(n).transpose();
}

Vec hidden_repr(const ModelParams& params, const PromptState& prompt) {
  return hidden_repr_emb(params, prompt.materialize(params.embedding), nullptr);
}

double row_loss_and_grads(const ModelParams& params, std::span<const int> row, ParamGrads& grads) {
  const int len = static_cast<int>(row.size());
  if (len < 2) throw DataError("train row too short");
  Mat x = embed_ids(params, row);
  std::vector<int> rows(len - 1);
  std::iota(rows.begin(), rows.end(), 0);
  ForwardTrace trace;
  Mat logits = forward_rows(params, x, rows, &trace);

  BackwardSeeds seeds;
  seeds.d_logit_rows.reserve(len - 1);
  double nll = 0.0;
  double inv = 1.0 / (len - 1);
  for (int i = 0; i < len - 1; ++i) {
    Vec p = softmax(logits.row(i).transpose());
    int target = row[i + 1];
    nll -= std::log(std::max(p[target], kProbFloor));
    Vec dl = p * inv;
    dl[target] -= inv;
    seeds.d_logit_rows.emplace_back(i, std::move(dl));
  }
  Mat dx = backward(params, trace, seeds, &grads);
  for (int i = 0; i < len; ++i) grads.embedding.row(row[i]) += dx.row(i);
  return nll * inv;
}

TrainStats train(ModelParams& params, std::span<const TokenSeq> corpus, const TrainConfig& config) {
  if (corpus.empty()) throw DataError("train: empty corpus");
  const int ctx = params.config.max_context;
  for (const auto& s : corpus) {
    if (static_cast<int>(s.ids.size()) + 2 > ctx)
      throw DataError("train: sentence longer than max_context-2: " + s.text);
    for (int id : s.ids)
      if (id < 0 || id >= params.config.vocab_size) throw DataError("train: token id out of range");
  }

  TrainStats stats;
  if (config.epochs <= 0) {
    stats.final_loss = std::numeric_limits<double>::quiet_NaN();
    stats.final_perplexity = std::numeric_limits<double>::quiet_NaN();
    return stats;
  }

  ParamGrads grads = ParamGrads::zeros_like(params);
  AdamState adam{ParamGrads::zeros_like(params), ParamGrads::zeros_like(params), 0};
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, "train-epoch", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    // Every sentence is seen as its own <bos>-anchored row (the pattern the
    // probes use) and, when packing is on, once more inside a packed
    // <bos> s1 <eos> s2 <eos> ... row that trains later positions and the
    // sentence boundaries exemplar-prefixed prompts rely on.
    std::vector<std::vector<int>> rows;
    if (config.pack_rows) {
      std::vector<int> cur = {Tokenizer::kBos};
      for (std::size_t idx : order) {
        const auto& ids = corpus[idx].ids;
        if (static_cast<int>(cur.size() + ids.size() + 1) > ctx) {
          if (cur.size() > 1) rows.push_back(std::move(cur));
          cur = {Tokenizer::kBos};
        }
        cur.insert(cur.end(), ids.begin(), ids.end());
        cur.push_back(Tokenizer::kEos);
      }
      if (cur.size() > 1) rows.push_back(std::move(cur));
    }
    for (std::size_t idx : order) {
      std::vector<int> row = {Tokenizer::kBos};
      row.insert(row.end(), corpus[idx].ids.begin(), corpus[idx].ids.end());
      row.push_back(Tokenizer::kEos);
      rows.push_back(std::move(row));
    }
    std::shuffle(rows.begin(), rows.end(), rng);

    double progress = config.epochs > 1 ? static_cast<double>(epoch) / (config.epochs - 1) : 0.0;
    double lr = config.learning_rate *
                (1.0 - (1.0 - config.final_lr_fraction) * progress);

    double epoch_nll = 0.0;
    long epoch_tokens = 0;
    for (const auto& row : rows) {
      grads.clear();
      double loss = row_loss_and_grads(params, row, grads);
      if (!std::isfinite(loss)) throw NumericError("train: loss diverged (non-finite)");
      epoch_nll += loss * (static_cast<double>(row.size()) - 1.0);
      epoch_tokens += static_cast<long>(row.size()) - 1;
      if (config.grad_clip > 0.0) clip_grads(params, grads, adam, config.grad_clip);
      adam_step(params, grads, adam, lr, config.beta1, config.beta2, config.adam_eps);
    }
    stats.final_loss = epoch_nll / static_cast<double>(epoch_tokens);
    stats.epochs_run = epoch + 1;
    if (config.verbose && (epoch % 5 == 0 || epoch == config.epochs - 1)) {
      std::fprintf(stderr, "epoch %d/%d  loss %.4f nats/token\n", epoch + 1, config.epochs,
                   stats.final_loss);
    }
  }
  if (!params.finite()) throw NumericError("train: parameters non-finite after training");
  stats.final_perplexity = std::exp(stats.final_loss);
  return stats;
}

}  // namespace bprobe::tinylm
