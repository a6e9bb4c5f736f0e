#include "udama/baselines.hpp"

#include "udama/batching.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace udama {
namespace {

constexpr std::array<std::pair<BaselineKind, const char*>, 7> kNames = {{
    {BaselineKind::in_domain_supervised, "in_domain_supervised"},
    {BaselineKind::out_of_domain_supervised, "out_of_domain_supervised"},
    {BaselineKind::transfer, "transfer"},
    {BaselineKind::autoencoder, "autoencoder"},
    {BaselineKind::deep_coral, "deep_coral"},
    {BaselineKind::wdgrl, "wdgrl"},
    {BaselineKind::dann, "dann"},
}};

void require_processed(const SampleSet& set, const char* what) {
  if (!set.processed) throw std::invalid_argument(std::string(what) + ": set is not processed");
  set.validate();
}

void require_labeled(const SampleSet& set, const char* what) {
  require_processed(set, what);
  if (!set.labeled) throw std::invalid_argument(std::string(what) + ": set carries no labels");
}

bool not_discriminator(const std::string& layer) { return !is_discriminator_layer(layer); }
bool is_recurrent(const std::string& layer) { return layer.rfind("gru", 0) == 0; }

double set_mse(const ModelParams& p, const SampleSet& set) { return mse_loss(set.y, predict_set(p, set)); }

void add_dense_refs(std::vector<TensorRef>& out, Dense& d, const std::string& name) {
  out.push_back({name + ".W", name, d.W.data(), d.W.size(), d.W.rows(), d.W.cols()});
  out.push_back({name + ".b", name, d.b.data(), d.b.size(), d.b.size(), 1});
}

void add_gru_refs(std::vector<TensorRef>& out, BiGru& g, const std::string& name) {
  for (auto [cell, dir] : {std::pair<GruCell*, const char*>{&g.fwd, "fwd"}, {&g.bwd, "bwd"}}) {
    const std::string base = name + "." + dir;
    out.push_back({base + ".Wx", name, cell->Wx.data(), cell->Wx.size(), cell->Wx.rows(), cell->Wx.cols()});
    out.push_back({base + ".Wh", name, cell->Wh.data(), cell->Wh.size(), cell->Wh.rows(), cell->Wh.cols()});
    out.push_back({base + ".bx", name, cell->bx.data(), cell->bx.size(), cell->bx.size(), 1});
    out.push_back({base + ".bh", name, cell->bh.data(), cell->bh.size(), cell->bh.size(), 1});
  }
}

std::vector<TensorRef> decoder_refs(RecurrentDecoder& d) {
  std::vector<TensorRef> out;
  for (std::size_t l = 0; l < d.gru.size(); ++l) add_gru_refs(out, d.gru[l], "dec.gru" + std::to_string(l));
  add_dense_refs(out, d.out, "dec.out");
  return out;
}

std::vector<TensorRef> critic_refs(Critic& c) {
  std::vector<TensorRef> out;
  add_dense_refs(out, c.hidden, "critic.hidden");
  add_dense_refs(out, c.out, "critic.out");
  return out;
}

RecurrentDecoder zeros_like(const RecurrentDecoder& d) {
  RecurrentDecoder z = d;
  for (auto& t : decoder_refs(z)) std::fill(t.data, t.data + t.size, 0.0);
  return z;
}

Critic zeros_like(const Critic& c) {
  Critic z = c;
  for (auto& t : critic_refs(z)) std::fill(t.data, t.data + t.size, 0.0);
  return z;
}

void zero_refs(const std::vector<TensorRef>& refs) {
  for (const auto& t : refs) std::fill(t.data, t.data + t.size, 0.0);
}

/// Returns d x and accumulates critic parameter gradients for d_out per row.
Mat critic_backward(const Critic& c, const Mat& x, const Vec& d_out, Critic& grad) {
  const Mat pre = dense_forward(c.hidden, x);
  const Mat d_hidden = dense_backward(c.out, relu(pre), d_out, grad.out);
  return dense_backward(c.hidden, x, relu_backward(pre, d_hidden), grad.hidden);
}

/// Gradient of an alignment term with respect to both embedding batches;
/// returns the unweighted term for the trace.
using AlignFn = std::function<double(const Mat& emb_s, const Mat& emb_t, Mat& d_s, Mat& d_t)>;

/// Source-label MSE training of a fresh network with an optional alignment
/// term on (source, unlabelled target) embedding batches. Early stopping
/// monitors MSE on the validation split of `target_train`.
TrainResult fit_source_aligned(const SampleSet& source, const SampleSet& target_train, const TrainConfig& cfg,
                               std::uint64_t seed, const std::string& phase, const AlignFn* align) {
  cfg.validate();
  require_labeled(source, phase.c_str());
  require_labeled(target_train, phase.c_str());
  require_trainable_size(target_train.size(), cfg.validation_fraction, phase.c_str());

  RunRngs rngs(seed);
  const auto [t_fit, t_val] = split_rows(target_train.size(), cfg.validation_fraction, rngs.split_seed);
  const SampleSet val = target_train.subset(t_val);
  const SampleSet target_inputs = strip_labels(target_train.subset(t_fit));

  TrainResult res{init_for(cfg, source, seed), {}};
  ModelParams& p = res.params;
  res.trace.phase = phase;
  res.trace.config = cfg;

  EpochRecord e0;
  e0.loss_mse = set_mse(p, source);
  e0.loss_total = e0.loss_mse;
  e0.val_mse = set_mse(p, val);
  res.trace.epochs.push_back(e0);

  ModelParams best = p;
  double best_val = e0.val_mse;
  std::size_t since_best = 0;
  Adam adam({cfg.learning_rate});
  ModelParams grad = p.zeros_like();
  std::vector<std::size_t> rows(source.size()), t_rows(target_inputs.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::iota(t_rows.begin(), t_rows.end(), std::size_t{0});
  std::vector<std::vector<std::size_t>> t_batches;
  std::size_t t_cursor = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double mse_sum = 0.0, aux_sum = 0.0;
    std::size_t steps = 0;
    for (const auto& b : make_batches(rows, cfg.batch_size, rngs.shuffle)) {
      const Batch batch = make_batch(source, b);
      EncoderCache cache;
      const Mat emb = encode(p, batch, true, &rngs.dropout, &cache);
      const Vec y = gather(source.y, b);
      const Vec yhat = predict(p, emb);
      mse_sum += mse_loss(y, yhat);
      zero(grad);
      Mat d_emb = predict_backward(p, emb, mse_grad(y, yhat), grad);
      if (align) {
        if (t_cursor >= t_batches.size()) {
          t_batches = make_batches(t_rows, cfg.batch_size, rngs.shuffle);
          t_cursor = 0;
        }
        const Batch t_batch = make_batch(target_inputs, t_batches[t_cursor++]);
        EncoderCache t_cache;
        const Mat t_emb = encode(p, t_batch, true, &rngs.dropout, &t_cache);
        Mat d_s, d_t;
        aux_sum += (*align)(emb, t_emb, d_s, d_t);
        d_emb += d_s;
        encode_backward(p, t_cache, d_t, grad);
        update_running_stats(p, t_cache);
      }
      encode_backward(p, cache, d_emb, grad);
      auto [pt, gt] = select_trainable(p, grad, not_discriminator);
      adam.step(pt, gt);
      update_running_stats(p, cache);
      ++steps;
    }
    EpochRecord e;
    e.epoch = epoch;
    e.loss_mse = mse_sum / static_cast<double>(steps);
    e.aux = aux_sum / static_cast<double>(steps);
    e.loss_total = e.loss_mse;
    e.val_mse = set_mse(p, val);
    res.trace.epochs.push_back(e);
    res.trace.stop_epoch = epoch;
    if (!std::isfinite(e.val_mse)) break;
    if (e.val_mse < best_val) {
      best_val = e.val_mse;
      best = p;
      res.trace.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  res.params = std::move(best);
  return res;
}

}  // namespace

// ---- kinds ----------------------------------------------------------------------

const char* to_string(BaselineKind k) {
  for (const auto& [kind, name] : kNames)
    if (kind == k) return name;
  throw std::invalid_argument("to_string: unknown BaselineKind");
}

BaselineKind parse_baseline(const std::string& name) {
  for (const auto& [kind, n] : kNames)
    if (name == n) return kind;
  throw std::invalid_argument("unknown baseline method '" + name + "'");
}

std::vector<BaselineKind> all_baselines() {
  std::vector<BaselineKind> out;
  for (const auto& [kind, name] : kNames) out.push_back(kind);
  return out;
}

// ---- supervised -----------------------------------------------------------------

TrainResult train_supervised(const SampleSet& train, const TrainConfig& cfg, std::uint64_t seed) {
  require_labeled(train, "train_supervised");
  return fit_regression(init_for(cfg, train, seed), train, cfg, seed, "supervised");
}

TrainResult train_out_of_domain(const SampleSet& source, const SampleSet& target_train, const TrainConfig& cfg,
                                std::uint64_t seed) {
  return fit_source_aligned(source, target_train, cfg, seed, "out_of_domain", nullptr);
}

// ---- autoencoder ---------------------------------------------------------------

RecurrentDecoder init_decoder(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  RecurrentDecoder d;
  const auto H = static_cast<Eigen::Index>(cfg.recurrent_units);
  d.gru.resize(cfg.recurrent_layers);
  for (auto& g : d.gru) {
    g.fwd.resize(2 * H, H);
    g.bwd.resize(2 * H, H);
    init_uniform(g.fwd, rng);
    init_uniform(g.bwd, rng);
  }
  d.out.resize(2 * H, static_cast<Eigen::Index>(cfg.ts_features));
  init_uniform(d.out, rng);
  return d;
}

Mat decode(const RecurrentDecoder& dec, const Mat& encoded, SequenceShape shape, std::vector<BiGruCache>* caches,
           std::vector<Mat>* inputs) {
  std::vector<Mat> local_inputs;
  std::vector<Mat>& in = inputs ? *inputs : local_inputs;
  in.assign(dec.gru.size() + 1, Mat());
  if (caches) caches->assign(dec.gru.size(), BiGruCache());
  in[0] = encoded;
  for (std::size_t l = 0; l < dec.gru.size(); ++l)
    in[l + 1] = bigru_forward(dec.gru[l], in[l], shape, caches ? &(*caches)[l] : nullptr);
  return dense_forward(dec.out, in.back());
}

TrainResult train_autoencoder_pretrain(const SampleSet& source, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require_processed(source, "train_autoencoder_pretrain");
  require_trainable_size(source.size(), cfg.validation_fraction, "train_autoencoder_pretrain");
  RunRngs rngs(seed);
  const auto [tr, va] = split_rows(source.size(), cfg.validation_fraction, rngs.split_seed);
  const SampleSet fit = source.subset(tr);
  const SampleSet val = source.subset(va);

  TrainResult res{init_for(cfg, source, seed), {}};
  ModelParams& p = res.params;
  res.trace.phase = "autoencoder";
  res.trace.config = cfg;
  RecurrentDecoder dec = init_decoder(p.cfg, rngs.init_seed ^ 0x5eedULL);
  RecurrentDecoder dec_grad = zeros_like(dec);

  auto recon_loss = [&](const SampleSet& set) {
    double sse = 0.0, count = 0.0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < set.size(); start += 256) {
      rows.clear();
      for (std::size_t i = start; i < std::min(set.size(), start + 256); ++i) rows.push_back(i);
      const Batch b = make_batch(set, rows);
      EncoderCache cache;
      encode(p, b, false, nullptr, &cache);
      const Mat r = decode(dec, cache.last_output, b.shape);
      sse += (r - b.seq).squaredNorm();
      count += static_cast<double>(r.size());
    }
    return sse / count;
  };

  EpochRecord e0;
  e0.loss_mse = recon_loss(fit);
  e0.aux = e0.loss_mse;
  e0.loss_total = e0.loss_mse;
  e0.val_mse = recon_loss(val);
  res.trace.epochs.push_back(e0);

  ModelParams best = p;
  double best_val = e0.val_mse;
  std::size_t since_best = 0;
  Adam adam({cfg.learning_rate});
  ModelParams grad = p.zeros_like();
  std::vector<std::size_t> rows(fit.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (const auto& b : make_batches(rows, cfg.batch_size, rngs.shuffle)) {
      const Batch batch = make_batch(fit, b);
      EncoderCache cache;
      encode(p, batch, true, &rngs.dropout, &cache);
      std::vector<BiGruCache> dcaches;
      std::vector<Mat> dinputs;
      const Mat recon = decode(dec, cache.last_output, batch.shape, &dcaches, &dinputs);
      const Mat diff = recon - batch.seq;
      loss_sum += diff.squaredNorm() / static_cast<double>(diff.size());
      ++steps;

      zero(grad);
      auto dec_refs = decoder_refs(dec_grad);
      zero_refs(dec_refs);
      Mat d = dense_backward(dec.out, dinputs.back(), 2.0 * diff / static_cast<double>(diff.size()), dec_grad.out);
      for (std::size_t l = dec.gru.size(); l-- > 0;) d = bigru_backward(dec.gru[l], dcaches[l], d, batch.shape, dec_grad.gru[l]);
      recurrent_backward(p, cache, d, grad);

      auto [pt, gt] = select_trainable(p, grad, is_recurrent);
      auto dp = decoder_refs(dec);
      pt.insert(pt.end(), dp.begin(), dp.end());
      gt.insert(gt.end(), dec_refs.begin(), dec_refs.end());
      adam.step(pt, gt);
    }
    EpochRecord e;
    e.epoch = epoch;
    e.loss_mse = loss_sum / static_cast<double>(steps);
    e.aux = e.loss_mse;
    e.loss_total = e.loss_mse;
    e.val_mse = recon_loss(val);
    res.trace.epochs.push_back(e);
    res.trace.stop_epoch = epoch;
    if (!std::isfinite(e.val_mse)) break;
    if (e.val_mse < best_val) {
      best_val = e.val_mse;
      best = p;
      res.trace.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  res.params = std::move(best);
  return res;
}

// ---- Deep-CORAL ------------------------------------------------------------------

namespace {
Mat covariance(const Mat& x, const char* what) {
  if (x.rows() < 2) throw std::invalid_argument(std::string(what) + ": batches need at least 2 rows");
  const Mat c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}
}  // namespace

double coral_loss(const Mat& emb_s, const Mat& emb_t) {
  if (emb_s.cols() != emb_t.cols()) throw std::invalid_argument("coral_loss: embedding widths differ");
  const double d = static_cast<double>(emb_s.cols());
  return (covariance(emb_s, "coral_loss") - covariance(emb_t, "coral_loss")).squaredNorm() / (4.0 * d * d);
}

std::pair<Mat, Mat> coral_grad(const Mat& emb_s, const Mat& emb_t) {
  if (emb_s.cols() != emb_t.cols()) throw std::invalid_argument("coral_grad: embedding widths differ");
  const double d = static_cast<double>(emb_s.cols());
  const Mat g = (covariance(emb_s, "coral_grad") - covariance(emb_t, "coral_grad")) / (2.0 * d * d);
  const Mat cs = emb_s.rowwise() - emb_s.colwise().mean();
  const Mat ct = emb_t.rowwise() - emb_t.colwise().mean();
  return {2.0 * cs * g / static_cast<double>(emb_s.rows() - 1), -2.0 * ct * g / static_cast<double>(emb_t.rows() - 1)};
}

TrainResult train_deep_coral(const SampleSet& source, const SampleSet& target_train, const TrainConfig& cfg,
                             double coral_weight, std::uint64_t seed) {
  if (!(coral_weight >= 0.0)) throw std::invalid_argument("train_deep_coral: coral_weight must be >= 0");
  if (coral_weight == 0.0) return fit_source_aligned(source, target_train, cfg, seed, "deep_coral", nullptr);
  const AlignFn align = [coral_weight](const Mat& es, const Mat& et, Mat& ds, Mat& dt) {
    auto [gs, gt] = coral_grad(es, et);
    ds = coral_weight * gs;
    dt = coral_weight * gt;
    return coral_loss(es, et);
  };
  return fit_source_aligned(source, target_train, cfg, seed, "deep_coral", &align);
}

// ---- WDGRL -----------------------------------------------------------------------

Critic init_critic(std::size_t embedding_dim, std::size_t hidden, std::uint64_t seed) {
  if (embedding_dim == 0 || hidden == 0) throw std::invalid_argument("init_critic: sizes must be positive");
  std::mt19937_64 rng(seed);
  Critic c;
  c.hidden.resize(static_cast<Eigen::Index>(embedding_dim), static_cast<Eigen::Index>(hidden));
  c.out.resize(static_cast<Eigen::Index>(hidden), 1);
  init_uniform(c.hidden, rng);
  init_uniform(c.out, rng);
  return c;
}

Vec critic_forward(const Critic& c, const Mat& emb) {
  return dense_forward(c.out, relu(dense_forward(c.hidden, emb))).col(0);
}

double wasserstein_estimate(const Critic& c, const Mat& a, const Mat& b) {
  return critic_forward(c, a).mean() - critic_forward(c, b).mean();
}

namespace {
/// Per-row input gradients of the critic, n x d, with the hidden masks.
Mat critic_input_grads(const Critic& c, const Mat& x, Mat* masked_v = nullptr) {
  const Mat pre = dense_forward(c.hidden, x);
  Mat a = (pre.array() > 0.0).cast<double>().matrix();
  a.array().rowwise() *= c.out.W.row(0).array();
  if (masked_v) *masked_v = a;
  return a * c.hidden.W;
}
}  // namespace

double gradient_penalty(const Critic& c, const Mat& points) {
  if (points.rows() == 0) throw std::invalid_argument("gradient_penalty: no points");
  const Mat g = critic_input_grads(c, points);
  return (g.rowwise().norm().array() - 1.0).square().mean();
}

void gradient_penalty_backward(const Critic& c, const Mat& points, double weight, Critic& grad) {
  if (points.rows() == 0) throw std::invalid_argument("gradient_penalty_backward: no points");
  Mat a;
  const Mat g = critic_input_grads(c, points, &a);
  const Vec norms = g.rowwise().norm();
  Mat u = g;
  const double n = static_cast<double>(points.rows());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double coeff = norms(i) > 0.0 ? weight * 2.0 * (norms(i) - 1.0) / (norms(i) * n) : 0.0;
    u.row(i) *= coeff;
  }
  grad.hidden.W += a.transpose() * u;
  const Mat mask = (dense_forward(c.hidden, points).array() > 0.0).cast<double>().matrix();
  grad.out.W.row(0) += (mask.array() * (u * c.hidden.W.transpose()).array()).colwise().sum().matrix();
}

TrainResult train_wdgrl(const SampleSet& source, const SampleSet& target_train, const TrainConfig& cfg,
                        const WdgrlOptions& opts, std::uint64_t seed) {
  if (opts.critic_steps < 1) throw std::invalid_argument("train_wdgrl: critic_steps must be >= 1");
  if (!(opts.penalty_weight >= 0.0) || !(opts.distance_weight >= 0.0))
    throw std::invalid_argument("train_wdgrl: weights must be >= 0");
  cfg.validate();
  Critic critic = init_critic(cfg.net.embedding_dim(), opts.critic_hidden, seed ^ 0xc1171cULL);
  Critic cgrad = zeros_like(critic);
  Adam critic_adam({cfg.learning_rate});
  std::mt19937_64 eps_rng(seed ^ 0xe9513ULL);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const AlignFn align = [&](const Mat& es, const Mat& et, Mat& ds, Mat& dt) {
    const Eigen::Index n = std::min(es.rows(), et.rows());
    for (std::size_t k = 0; k < opts.critic_steps; ++k) {
      auto grefs = critic_refs(cgrad);
      zero_refs(grefs);
      // maximise mean f(s) - mean f(t): descend on its negative
      critic_backward(critic, es, Vec::Constant(es.rows(), -1.0 / static_cast<double>(es.rows())), cgrad);
      critic_backward(critic, et, Vec::Constant(et.rows(), 1.0 / static_cast<double>(et.rows())), cgrad);
      Mat interp(n, es.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        const double e = unif(eps_rng);
        interp.row(i) = e * es.row(i) + (1.0 - e) * et.row(i);
      }
      gradient_penalty_backward(critic, interp, opts.penalty_weight, cgrad);
      critic_adam.step(critic_refs(critic), grefs);
    }
    Critic scratch = zeros_like(critic);
    ds = critic_backward(critic, es, Vec::Constant(es.rows(), opts.distance_weight / static_cast<double>(es.rows())), scratch);
    dt = critic_backward(critic, et, Vec::Constant(et.rows(), -opts.distance_weight / static_cast<double>(et.rows())), scratch);
    return wasserstein_estimate(critic, es, et);
  };
  return fit_source_aligned(source, target_train, cfg, seed, "wdgrl", &align);
}

// ---- DANN ------------------------------------------------------------------------

TrainResult train_dann(const ModelParams& pretrained, const SampleSet& mixed, const DomainAssignment& assignment,
                       const TrainConfig& cfg, std::uint64_t seed, const SampleSet* probe_set) {
  TrainConfig c = cfg;
  c.weights.lambda1 = 1.0;
  c.weights.lambda2 = 0.0;
  TrainResult r = adapt_udama(pretrained, mixed, assignment, c, seed, probe_set);
  r.trace.phase = "dann";
  return r;
}

}  // namespace udama
