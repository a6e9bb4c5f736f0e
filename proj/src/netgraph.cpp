#include "udama/netgraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace udama {
namespace {

TensorRef ref(const std::string& layer, const std::string& part, Mat& m) {
  return {layer + "." + part, layer, m.data(), m.size(), m.rows(), m.cols()};
}
TensorRef ref(const std::string& layer, const std::string& part, Vec& v) {
  return {layer + "." + part, layer, v.data(), v.size(), v.rows(), 1};
}

void push_dense(std::vector<TensorRef>& out, const std::string& layer, Dense& d) {
  out.push_back(ref(layer, "W", d.W));
  out.push_back(ref(layer, "b", d.b));
}

void push_cell(std::vector<TensorRef>& out, const std::string& layer, const std::string& dir, GruCell& c) {
  out.push_back(ref(layer, dir + ".Wx", c.Wx));
  out.push_back(ref(layer, dir + ".Wh", c.Wh));
  out.push_back(ref(layer, dir + ".bx", c.bx));
  out.push_back(ref(layer, dir + ".bh", c.bh));
}

std::string gru_name(std::size_t l) { return "gru" + std::to_string(l); }

}  // namespace

void NetConfig::validate() const {
  if (recurrent_units == 0) throw std::invalid_argument("NetConfig: recurrent_units must be positive");
  if (recurrent_layers == 0) throw std::invalid_argument("NetConfig: recurrent_layers must be positive");
  if (meta_hidden == 0) throw std::invalid_argument("NetConfig: meta_hidden must be positive");
  if (disc_hidden == 0) throw std::invalid_argument("NetConfig: disc_hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("NetConfig: dropout must lie in [0,1)");
  if (!(variance_floor > 0.0)) throw std::invalid_argument("NetConfig: variance_floor must be positive");
  if (ts_features == 0 || meta_features == 0) throw std::invalid_argument("NetConfig: input widths must be positive");
}

ModelParams ModelParams::zeros(const NetConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  const auto H = static_cast<Eigen::Index>(cfg.recurrent_units);
  const auto d = static_cast<Eigen::Index>(cfg.embedding_dim());
  const auto dh = static_cast<Eigen::Index>(cfg.disc_hidden);
  p.gru.resize(cfg.recurrent_layers);
  for (std::size_t l = 0; l < cfg.recurrent_layers; ++l) {
    const Eigen::Index in = l == 0 ? static_cast<Eigen::Index>(cfg.ts_features) : 2 * H;
    p.gru[l].fwd.resize(in, H);
    p.gru[l].bwd.resize(in, H);
  }
  p.meta_bn.resize(static_cast<Eigen::Index>(cfg.meta_features));
  p.meta_dense.resize(static_cast<Eigen::Index>(cfg.meta_features), static_cast<Eigen::Index>(cfg.meta_hidden));
  p.predictor.resize(d, 1);
  p.coarse_hidden.resize(d, dh);
  p.coarse_out.resize(dh, 1);
  p.fine_hidden.resize(d, dh);
  p.fine_out.resize(dh, 2);
  for (const auto& name : p.layer_names()) p.trainable[name] = true;
  return p;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& t : z.tensors()) std::fill(t.data, t.data + t.size, 0.0);
  for (auto& t : z.buffers()) std::fill(t.data, t.data + t.size, 0.0);
  return z;
}

std::vector<std::string> ModelParams::layer_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < gru.size(); ++l) names.push_back(gru_name(l));
  for (const char* n : {"meta_bn", "meta_dense", "predictor", "coarse_hidden", "coarse_out", "fine_hidden", "fine_out"})
    names.emplace_back(n);
  return names;
}

std::vector<TensorRef> ModelParams::tensors() {
  std::vector<TensorRef> out;
  for (std::size_t l = 0; l < gru.size(); ++l) {
    push_cell(out, gru_name(l), "fwd", gru[l].fwd);
    push_cell(out, gru_name(l), "bwd", gru[l].bwd);
  }
  out.push_back(ref("meta_bn", "gamma", meta_bn.gamma));
  out.push_back(ref("meta_bn", "beta", meta_bn.beta));
  push_dense(out, "meta_dense", meta_dense);
  push_dense(out, "predictor", predictor);
  push_dense(out, "coarse_hidden", coarse_hidden);
  push_dense(out, "coarse_out", coarse_out);
  push_dense(out, "fine_hidden", fine_hidden);
  push_dense(out, "fine_out", fine_out);
  return out;
}

std::vector<TensorRef> ModelParams::buffers() {
  return {ref("meta_bn", "running_mean", meta_bn.running_mean), ref("meta_bn", "running_var", meta_bn.running_var)};
}

bool ModelParams::is_trainable(const std::string& layer) const {
  auto it = trainable.find(layer);
  if (it == trainable.end()) throw std::invalid_argument("ModelParams: unknown layer '" + layer + "'");
  return it->second;
}

bool ModelParams::all_finite() {
  for (const auto& t : tensors())
    for (Eigen::Index i = 0; i < t.size; ++i)
      if (!std::isfinite(t.data[i])) return false;
  return true;
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (!(cfg == o.cfg) || trainable != o.trainable || freeze_applied != o.freeze_applied) return false;
  auto& a = const_cast<ModelParams&>(*this);
  auto& b = const_cast<ModelParams&>(o);
  auto ta = a.tensors(), tb = b.tensors();
  auto ba = a.buffers(), bb = b.buffers();
  ta.insert(ta.end(), ba.begin(), ba.end());
  tb.insert(tb.end(), bb.begin(), bb.end());
  if (ta.size() != tb.size()) return false;
  for (std::size_t k = 0; k < ta.size(); ++k) {
    if (ta[k].size != tb[k].size) return false;
    if (std::memcmp(ta[k].data, tb[k].data, static_cast<std::size_t>(ta[k].size) * sizeof(double)) != 0) return false;
  }
  return true;
}

ModelParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(cfg);
  std::mt19937_64 rng(seed);
  for (auto& layer : p.gru) {
    init_uniform(layer.fwd, rng);
    init_uniform(layer.bwd, rng);
  }
  init_uniform(p.meta_dense, rng);
  init_uniform(p.predictor, rng);
  init_uniform(p.coarse_hidden, rng);
  init_uniform(p.coarse_out, rng);
  init_uniform(p.fine_hidden, rng);
  init_uniform(p.fine_out, rng);
  return p;
}

ModelParams freeze_plan(const ModelParams& params) {
  ModelParams out = params;
  for (auto& [name, flag] : out.trainable) flag = !(name == "gru0" || name == "meta_dense");
  out.freeze_applied = true;
  return out;
}

Batch make_batch(const SampleSet& set, std::span<const std::size_t> rows) {
  Batch b;
  const std::size_t B = rows.size();
  const std::size_t T = set.X.steps();
  const std::size_t F = set.X.channels();
  b.shape = {B, T};
  b.seq.resize(static_cast<Eigen::Index>(T * B), static_cast<Eigen::Index>(F));
  b.meta.resize(static_cast<Eigen::Index>(B), set.M.cols());
  for (std::size_t k = 0; k < B; ++k) {
    const std::size_t i = rows[k];
    if (i >= set.size()) throw std::out_of_range("make_batch: row index out of range");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < F; ++c)
        b.seq(static_cast<Eigen::Index>(t * B + k), static_cast<Eigen::Index>(c)) = set.X.at(i, t, c);
    b.meta.row(static_cast<Eigen::Index>(k)) = set.M.row(static_cast<Eigen::Index>(i));
  }
  return b;
}

Batch make_batch(const SampleSet& set) {
  std::vector<std::size_t> rows(set.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return make_batch(set, rows);
}

Mat encode(const ModelParams& params, const Batch& batch, bool train_mode, std::mt19937_64* rng, EncoderCache* cache) {
  const NetConfig& cfg = params.cfg;
  if (batch.seq.cols() != static_cast<Eigen::Index>(cfg.ts_features) ||
      batch.meta.cols() != static_cast<Eigen::Index>(cfg.meta_features))
    throw std::invalid_argument("encode: input widths do not match the network");
  if (batch.seq.rows() != static_cast<Eigen::Index>(batch.shape.batch * batch.shape.steps) ||
      batch.meta.rows() != static_cast<Eigen::Index>(batch.shape.batch) || batch.shape.steps == 0 ||
      batch.shape.batch == 0)
    throw std::invalid_argument("encode: inconsistent batch shape");
  if (!batch.seq.allFinite() || !batch.meta.allFinite()) throw std::invalid_argument("encode: non-finite input");

  const auto B = static_cast<Eigen::Index>(batch.shape.batch);
  const auto T = static_cast<Eigen::Index>(batch.shape.steps);
  const auto H2 = static_cast<Eigen::Index>(2 * cfg.recurrent_units);
  const auto L = params.gru.size();

  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.layer_inputs.assign(L, Mat());
  c.gru.assign(L, BiGruCache());
  c.layer_inputs[0] = batch.seq;
  c.shape = batch.shape;
  for (std::size_t l = 0; l < L; ++l) {
    Mat out = bigru_forward(params.gru[l], c.layer_inputs[l], batch.shape, cache ? &c.gru[l] : nullptr);
    if (l + 1 < L)
      c.layer_inputs[l + 1] = std::move(out);
    else
      c.last_output = std::move(out);
  }

  Mat emb(B, static_cast<Eigen::Index>(cfg.embedding_dim()));
  auto pooled = emb.leftCols(H2);
  pooled.setZero();
  for (Eigen::Index t = 0; t < T; ++t) pooled += c.last_output.middleRows(t * B, B);
  pooled /= static_cast<double>(T);

  c.meta_norm = batchnorm_forward(params.meta_bn, batch.meta, train_mode, &c.bn);
  c.meta_pre = dense_forward(params.meta_dense, c.meta_norm);
  emb.rightCols(static_cast<Eigen::Index>(cfg.meta_hidden)) = relu(c.meta_pre);

  c.dropout_mask.resize(0, 0);
  if (train_mode && cfg.dropout > 0.0) {
    if (!rng) throw std::invalid_argument("encode: train mode with dropout needs an rng");
    std::bernoulli_distribution keep(1.0 - cfg.dropout);
    const double scale = 1.0 / (1.0 - cfg.dropout);
    c.dropout_mask.resize(emb.rows(), emb.cols());
    for (Eigen::Index j = 0; j < emb.cols(); ++j)
      for (Eigen::Index i = 0; i < emb.rows(); ++i) c.dropout_mask(i, j) = keep(*rng) ? scale : 0.0;
    emb.array() *= c.dropout_mask.array();
  }
  return emb;
}

void encode_backward(const ModelParams& params, const EncoderCache& cache, const Mat& d_emb, ModelParams& grad) {
  const NetConfig& cfg = params.cfg;
  const auto H2 = static_cast<Eigen::Index>(2 * cfg.recurrent_units);
  Mat d = d_emb;
  if (cache.dropout_mask.size() > 0) d.array() *= cache.dropout_mask.array();

  // Metadata branch.
  const Mat d_pre = relu_backward(cache.meta_pre, d.rightCols(static_cast<Eigen::Index>(cfg.meta_hidden)));
  const Mat d_norm = dense_backward(params.meta_dense, cache.meta_norm, d_pre, grad.meta_dense);
  batchnorm_backward(params.meta_bn, cache.bn, d_norm, grad.meta_bn);

  // Time branch: global average pooling spreads the gradient evenly over steps.
  const Eigen::Index T = cache.last_output.rows() / d.rows();
  Mat d_seq(cache.last_output.rows(), H2);
  const Mat d_pool = d.leftCols(H2) / static_cast<double>(T);
  for (Eigen::Index t = 0; t < T; ++t) d_seq.middleRows(t * d.rows(), d.rows()) = d_pool;
  recurrent_backward(params, cache, d_seq, grad);
}

void recurrent_backward(const ModelParams& params, const EncoderCache& cache, const Mat& d_last_output,
                        ModelParams& grad) {
  const std::size_t L = params.gru.size();
  std::size_t lowest = 0;  // layers below `lowest` are frozen and need no backward pass
  while (lowest < L && !params.is_trainable(gru_name(lowest))) ++lowest;
  if (lowest == L) return;
  Mat d_seq = d_last_output;
  for (std::size_t l = L; l-- > lowest;)
    d_seq = bigru_backward(params.gru[l], cache.gru[l], d_seq, cache.shape, grad.gru[l]);
}

void update_running_stats(ModelParams& params, const EncoderCache& cache) {
  batchnorm_update_stats(params.meta_bn, cache.bn, cache.meta_norm.rows());
}

Vec predict(const ModelParams& params, const Mat& emb) { return dense_forward(params.predictor, emb).col(0); }

Mat predict_backward(const ModelParams& params, const Mat& emb, const Vec& d_out, ModelParams& grad) {
  return dense_backward(params.predictor, emb, d_out, grad.predictor);
}

CoarseOutput disc_coarse_forward(const ModelParams& params, const Mat& emb) {
  CoarseOutput out;
  out.hidden_pre = dense_forward(params.coarse_hidden, emb);
  out.logit = dense_forward(params.coarse_out, relu(out.hidden_pre)).col(0);
  out.prob = out.logit.unaryExpr([](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
  return out;
}

Vec disc_coarse(const ModelParams& params, const Mat& emb) { return disc_coarse_forward(params, emb).prob; }

Mat disc_coarse_backward(const ModelParams& params, const Mat& emb, const CoarseOutput& out, const Vec& d_logit,
                         ModelParams& grad) {
  const Mat hidden = relu(out.hidden_pre);
  const Mat d_hidden = dense_backward(params.coarse_out, hidden, d_logit, grad.coarse_out);
  return dense_backward(params.coarse_hidden, emb, relu_backward(out.hidden_pre, d_hidden), grad.coarse_hidden);
}

FineOutput disc_fine_forward(const ModelParams& params, const Mat& emb) {
  FineOutput out;
  out.hidden_pre = dense_forward(params.fine_hidden, emb);
  const Mat o = dense_forward(params.fine_out, relu(out.hidden_pre));
  out.mu = o.col(0);
  out.log_var = o.col(1);
  out.var = (out.log_var.array().exp() + params.cfg.variance_floor).matrix();
  return out;
}

std::pair<Vec, Vec> disc_fine(const ModelParams& params, const Mat& emb) {
  auto out = disc_fine_forward(params, emb);
  return {std::move(out.mu), std::move(out.var)};
}

Mat disc_fine_backward(const ModelParams& params, const Mat& emb, const FineOutput& out, const Vec& d_mu,
                       const Vec& d_log_var, ModelParams& grad) {
  Mat d_o(emb.rows(), 2);
  d_o.col(0) = d_mu;
  d_o.col(1) = d_log_var;
  const Mat hidden = relu(out.hidden_pre);
  const Mat d_hidden = dense_backward(params.fine_out, hidden, d_o, grad.fine_out);
  return dense_backward(params.fine_hidden, emb, relu_backward(out.hidden_pre, d_hidden), grad.fine_hidden);
}

Mat embed_set(const ModelParams& params, const SampleSet& set, std::size_t chunk) {
  Mat out(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(params.cfg.embedding_dim()));
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < set.size(); start += chunk) {
    const std::size_t stop = std::min(set.size(), start + chunk);
    rows.resize(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(rows.size())) =
        encode(params, make_batch(set, rows), false);
  }
  return out;
}

Vec predict_set(const ModelParams& params, const SampleSet& set, std::size_t chunk) {
  return predict(params, embed_set(params, set, chunk));
}

}  // namespace udama
