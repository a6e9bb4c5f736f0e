#include "udama/trainer.hpp"

#include "udama/batching.hpp"
#include "udama/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <tuple>

namespace udama {
namespace {

NetConfig net_for(NetConfig net, const SampleSet& set) {
  net.ts_features = set.X.channels();
  net.meta_features = static_cast<std::size_t>(set.M.cols());
  return net;
}

void require_processed_labeled(const SampleSet& set, const char* what) {
  if (!set.processed) throw std::invalid_argument(std::string(what) + ": set is not processed");
  if (!set.labeled) throw std::invalid_argument(std::string(what) + ": set carries no labels");
  set.validate();
}

bool not_discriminator(const std::string& layer) { return !is_discriminator_layer(layer); }
bool is_coarse(const std::string& layer) { return layer.rfind("coarse_", 0) == 0; }
bool is_fine(const std::string& layer) { return layer.rfind("fine_", 0) == 0; }

double set_mse(const ModelParams& p, const SampleSet& set) { return mse_loss(set.y, predict_set(p, set)); }

std::vector<std::size_t> concat_rows(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out = a;
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  return out;
}

struct GnllParts {
  double loss;
  Vec d_mu, d_log_var;  // already divided by batch size
};

GnllParts gnll_batch(const Vec& t, const FineOutput& f, double floor) {
  const auto n = t.size();
  GnllParts g{gaussian_nll(t, f.mu, f.var, floor), Vec(n), Vec(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto gi = gaussian_nll_grad(t(i), f.mu(i), f.log_var(i), floor);
    g.d_mu(i) = gi.d_mu / static_cast<double>(n);
    g.d_log_var(i) = gi.d_log_var / static_cast<double>(n);
  }
  return g;
}

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

// ---- configuration ------------------------------------------------------

void TrainConfig::validate() const {
  net.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be at least 2");
  if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be positive");
  if (patience < 1 || patience > max_epochs)
    throw std::invalid_argument("TrainConfig: patience must lie in [1, max_epochs]");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("TrainConfig: validation_fraction must lie in (0, 1)");
  weights.validate();
}

DomainAssignment DomainAssignment::subset(std::span<const std::size_t> rows) const {
  DomainAssignment out;
  out.y_c = gather(y_c, rows);
  if (has_distribution()) {
    out.mean = gather(mean, rows);
    out.var = gather(var, rows);
  }
  return out;
}

void TrainTrace::write_jsonl(std::ostream& os) const {
  for (const auto& e : epochs) {
    nlohmann::json j;
    j["phase"] = phase;
    j["epoch"] = e.epoch;
    j["loss_mse"] = num(e.loss_mse);
    j["loss_cse"] = num(e.loss_cse);
    j["loss_gll"] = num(e.loss_gll);
    j["loss_total"] = num(e.loss_total);
    j["aux"] = num(e.aux);
    j["disc_cse"] = num(e.disc_cse);
    j["disc_gll"] = num(e.disc_gll);
    j["val_mse"] = num(e.val_mse);
    j["coarse_acc"] = num(e.coarse_acc);
    j["alpha"] = config.weights.alpha;
    j["lambda1"] = config.weights.lambda1;
    j["lambda2"] = config.weights.lambda2;
    j["learning_rate"] = config.learning_rate;
    j["batch_size"] = config.batch_size;
    j["best_epoch"] = best_epoch;
    j["stop_epoch"] = stop_epoch;
    os << j.dump() << '\n';
  }
}

// ---- splitting ------------------------------------------------------------

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(std::size_t n, double frac,
                                                                         std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) throw std::invalid_argument("split_rows: fraction must lie in (0, 1)");
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))));
  if (n_val >= n) throw std::invalid_argument("split_rows: too few rows to split");
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  std::vector<std::size_t> val(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

void require_trainable_size(std::size_t n, double validation_fraction, const char* what) {
  const double needed = 2.0 / validation_fraction;
  if (static_cast<double>(n) + 1e-9 < needed)
    throw std::invalid_argument(std::string(what) + ": need at least " + std::to_string(static_cast<int>(std::ceil(needed - 1e-9))) +
                                " samples, got " + std::to_string(n));
}

// ---- supervised regression -------------------------------------------------

TrainResult fit_regression(ModelParams init, const SampleSet& train, const TrainConfig& cfg, std::uint64_t seed,
                           const std::string& phase) {
  cfg.validate();
  require_processed_labeled(train, phase.c_str());
  require_trainable_size(train.size(), cfg.validation_fraction, phase.c_str());

  RunRngs rngs(seed);
  const auto [tr, va] = split_rows(train.size(), cfg.validation_fraction, rngs.split_seed);
  const SampleSet val = train.subset(va);
  const SampleSet fit = train.subset(tr);

  TrainResult res{std::move(init), {}};
  ModelParams& p = res.params;
  res.trace.phase = phase;
  res.trace.config = cfg;

  EpochRecord e0;
  e0.loss_mse = set_mse(p, fit);
  e0.loss_total = e0.loss_mse;
  e0.val_mse = set_mse(p, val);
  res.trace.epochs.push_back(e0);

  ModelParams best = p;
  double best_val = e0.val_mse;
  std::size_t since_best = 0;
  Adam adam({cfg.learning_rate});
  ModelParams grad = p.zeros_like();
  std::vector<std::size_t> rows(fit.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double mse_sum = 0.0;
    std::size_t steps = 0;
    for (const auto& b : make_batches(rows, cfg.batch_size, rngs.shuffle)) {
      const Batch batch = make_batch(fit, b);
      EncoderCache cache;
      const Mat emb = encode(p, batch, true, &rngs.dropout, &cache);
      const Vec y = gather(fit.y, b);
      const Vec yhat = predict(p, emb);
      mse_sum += mse_loss(y, yhat);
      ++steps;
      zero(grad);
      const Mat d_emb = predict_backward(p, emb, mse_grad(y, yhat), grad);
      encode_backward(p, cache, d_emb, grad);
      auto [pt, gt] = select_trainable(p, grad, not_discriminator);
      adam.step(pt, gt);
      update_running_stats(p, cache);
    }
    EpochRecord e;
    e.epoch = epoch;
    e.loss_mse = mse_sum / static_cast<double>(steps);
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

ModelParams init_for(const TrainConfig& cfg, const SampleSet& data, std::uint64_t seed) {
  cfg.validate();
  ModelParams p = init_params(net_for(cfg.net, data), RunRngs(seed).init_seed);
  if (data.labeled && data.size() > 0) p.predictor.b(0) = data.y.mean();
  return p;
}

TrainResult pretrain(const SampleSet& source, const TrainConfig& cfg, std::uint64_t seed) {
  if (source.grade != LabelGrade::silver) throw std::invalid_argument("pretrain: source labels must be silver-standard");
  require_processed_labeled(source, "pretrain");
  return fit_regression(init_for(cfg, source, seed), source, cfg, seed, "pretrain");
}

TrainResult finetune(const ModelParams& pretrained, const SampleSet& target_train, const TrainConfig& cfg,
                     std::uint64_t seed) {
  if (!pretrained.freeze_applied) throw InvalidState("finetune: freeze plan not applied");
  return fit_regression(pretrained, target_train, cfg, seed, "finetune");
}

// ---- domain mixing -----------------------------------------------------------

std::size_t injection_count(double frac, std::size_t n_target) {
  if (!(frac >= 0.0) || !std::isfinite(frac)) throw std::invalid_argument("injection_count: fraction must be >= 0");
  return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n_target) + 0.5 + 1e-9));
}

Vec domain_labels(const SampleSet& set) {
  Vec out(static_cast<Eigen::Index>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = set.domain[i] == Domain::target ? 1.0 : 0.0;
  return out;
}

std::pair<SampleSet, DomainAssignment> mix_domains(const SampleSet& target_train, const SampleSet& source_pool,
                                                   double injection_frac_of_target, std::uint64_t seed) {
  const std::size_t count = injection_count(injection_frac_of_target, target_train.size());
  if (count > source_pool.size())
    throw std::invalid_argument("mix_domains: injection of " + std::to_string(count) + " exceeds source pool of " +
                                std::to_string(source_pool.size()));
  std::vector<std::size_t> pool(source_pool.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);

  SampleSet target = target_train;
  std::fill(target.domain.begin(), target.domain.end(), Domain::target);
  SampleSet injected = source_pool.subset(pool);
  std::fill(injected.domain.begin(), injected.domain.end(), Domain::source);
  SampleSet mixed = SampleSet::concat(target, injected, true);

  DomainAssignment a;
  a.y_c = domain_labels(mixed);
  return {std::move(mixed), std::move(a)};
}

DomainAssignment assign_distribution_labels(const SampleSet& mixed, const DomainAssignment& assignment) {
  if (assignment.size() != mixed.size()) throw std::invalid_argument("assign_distribution_labels: size mismatch");
  if (!mixed.labeled) throw std::invalid_argument("assign_distribution_labels: set carries no labels");
  DomainAssignment out = assignment;
  out.mean.resize(assignment.y_c.size());
  out.var.resize(assignment.y_c.size());
  for (double tag : {0.0, 1.0}) {
    std::vector<double> labels;
    for (Eigen::Index i = 0; i < mixed.y.size(); ++i)
      if (assignment.y_c(i) == tag) labels.push_back(mixed.y(i));
    if (labels.empty()) continue;
    if (labels.size() < 2)
      throw std::invalid_argument(std::string("assign_distribution_labels: ") + (tag == 0.0 ? "source" : "target") +
                                  " domain has fewer than 2 samples");
    // Copied into aligned storage: vectorised reductions must not depend on heap alignment.
    const Vec v = Eigen::Map<const Vec>(labels.data(), static_cast<Eigen::Index>(labels.size()));
    const double m = v.mean();
    const double var = (v.array() - m).square().mean();
    if (!(var > 0.0)) throw DegenerateInput("assign_distribution_labels: domain labels have zero variance");
    for (Eigen::Index i = 0; i < mixed.y.size(); ++i)
      if (assignment.y_c(i) == tag) {
        out.mean(i) = m;
        out.var(i) = var;
      }
  }
  for (Eigen::Index i = 0; i < assignment.y_c.size(); ++i)
    if (assignment.y_c(i) != 0.0 && assignment.y_c(i) != 1.0)
      throw std::invalid_argument("assign_distribution_labels: y_c must be 0 or 1");
  return out;
}

// ---- adversarial adaptation -------------------------------------------------

TrainResult adapt_udama(const ModelParams& pretrained, const SampleSet& mixed, const DomainAssignment& assignment,
                        const TrainConfig& cfg, std::uint64_t seed, const SampleSet* probe_set) {
  cfg.validate();
  if (!pretrained.freeze_applied) throw InvalidState("adapt_udama: freeze plan not applied");
  require_processed_labeled(mixed, "adapt_udama");
  if (assignment.size() != mixed.size() || !assignment.has_distribution())
    throw std::invalid_argument("adapt_udama: domain assignment does not match the mixed set");
  const LossWeights& w = cfg.weights;
  const bool use_coarse = w.lambda1 > 0.0;
  const bool use_fine = w.lambda2 > 0.0;

  RunRngs rngs(seed);
  std::vector<std::size_t> target_rows, source_rows;
  for (std::size_t i = 0; i < mixed.size(); ++i)
    (assignment.y_c(static_cast<Eigen::Index>(i)) == 1.0 ? target_rows : source_rows).push_back(i);
  require_trainable_size(target_rows.size(), cfg.validation_fraction, "adapt_udama");

  auto split_of = [&](const std::vector<std::size_t>& rows, std::uint64_t s) {
    const auto [tr, va] = split_rows(rows.size(), cfg.validation_fraction, s);
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
    for (auto k : tr) out.first.push_back(rows[k]);
    for (auto k : va) out.second.push_back(rows[k]);
    return out;
  };
  const auto [t_train, t_val] = split_of(target_rows, rngs.split_seed);
  std::vector<std::size_t> s_train = source_rows, s_val;
  if (!probe_set && source_rows.size() >= 2) std::tie(s_train, s_val) = split_of(source_rows, rngs.split_seed + 1);

  const std::vector<std::size_t> train_rows = concat_rows(t_train, s_train);
  const SampleSet val = mixed.subset(t_val);
  SampleSet heldout;
  if (probe_set) {
    heldout = *probe_set;
  } else {
    heldout = mixed.subset(concat_rows(t_val, s_val));
    const Vec tags = gather(assignment.y_c, concat_rows(t_val, s_val));
    for (std::size_t i = 0; i < heldout.size(); ++i)
      heldout.domain[i] = tags(static_cast<Eigen::Index>(i)) == 1.0 ? Domain::target : Domain::source;
  }

  const Vec gnll_target = cfg.gnll_target == GnllTarget::domain_mean ? assignment.mean : mixed.y;
  const double floor = pretrained.cfg.variance_floor;

  TrainResult res{pretrained, {}};
  ModelParams& p = res.params;
  res.trace.phase = use_fine ? (use_coarse ? "adapt" : "adapt_fine_only") : "adapt_coarse_only";
  res.trace.config = cfg;

  if (use_fine) {
    const Vec t = gather(gnll_target, train_rows);
    const double var = (t.array() - t.mean()).square().mean();
    p.fine_out.b(0) = t.mean();
    p.fine_out.b(1) = std::log(std::max(var, 1.0));
  }

  auto measure = [&](EpochRecord& e) {
    e.val_mse = set_mse(p, val);
    e.coarse_acc = use_coarse ? coarse_accuracy(p, heldout) : kNotMeasured;
  };

  {
    EpochRecord e0;
    const SampleSet fit = mixed.subset(train_rows);
    const Mat emb = embed_set(p, fit);
    e0.loss_mse = mse_loss(fit.y, predict(p, emb));
    if (use_coarse) e0.loss_cse = cross_entropy(gather(assignment.y_c, train_rows), disc_coarse(p, emb));
    if (use_fine) {
      const auto [mu, var] = disc_fine(p, emb);
      e0.loss_gll = gaussian_nll(gather(gnll_target, train_rows), mu, var, floor);
    }
    e0.loss_total = total_adapt_loss(w, e0.loss_mse, e0.loss_cse, e0.loss_gll);
    measure(e0);
    res.trace.epochs.push_back(e0);
  }

  ModelParams best = p;
  double best_val = res.trace.epochs[0].val_mse;
  std::size_t since_best = 0;
  Adam adam_disc({cfg.learning_rate});
  Adam adam_gen({cfg.learning_rate});
  ModelParams grad = p.zeros_like();
  ModelParams scratch = p.zeros_like();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double mse_sum = 0.0, cse_sum = 0.0, gll_sum = 0.0, dcse_sum = 0.0, dgll_sum = 0.0;
    std::size_t steps = 0;
    for (const auto& b : make_batches(train_rows, cfg.batch_size, rngs.shuffle)) {
      const Batch batch = make_batch(mixed, b);
      EncoderCache cache;
      const Mat emb = encode(p, batch, true, &rngs.dropout, &cache);
      const Vec y = gather(mixed.y, b);
      const Vec yc = gather(assignment.y_c, b);
      const Vec t = gather(gnll_target, b);

      // (i) discriminator step on fixed embeddings
      if (use_coarse) {
        const CoarseOutput co = disc_coarse_forward(p, emb);
        dcse_sum += cross_entropy(yc, co.prob);
        zero(grad);
        disc_coarse_backward(p, emb, co, cross_entropy_logit_grad(yc, co.logit), grad);
        auto [pt, gt] = select_trainable(p, grad, is_coarse);
        adam_disc.step(pt, gt);
      }
      if (use_fine) {
        const FineOutput fo = disc_fine_forward(p, emb);
        const GnllParts g = gnll_batch(t, fo, floor);
        dgll_sum += g.loss;
        zero(grad);
        disc_fine_backward(p, emb, fo, g.d_mu, g.d_log_var, grad);
        auto [pt, gt] = select_trainable(p, grad, is_fine);
        adam_disc.step(pt, gt);
      }

      // (ii) adversarial step on E and G_y with discriminators held fixed
      zero(grad);
      zero(scratch);
      const Vec yhat = predict(p, emb);
      const double l_mse = mse_loss(y, yhat);
      Mat d_emb = predict_backward(p, emb, w.alpha * mse_grad(y, yhat), grad);
      double l_cse = 0.0, l_gll = 0.0;
      if (use_coarse) {
        const CoarseOutput co = disc_coarse_forward(p, emb);
        l_cse = cross_entropy(yc, co.prob);
        d_emb += disc_coarse_backward(p, emb, co, -w.lambda1 * cross_entropy_logit_grad(yc, co.logit), scratch);
      }
      if (use_fine) {
        const FineOutput fo = disc_fine_forward(p, emb);
        const GnllParts g = gnll_batch(t, fo, floor);
        l_gll = g.loss;
        d_emb += disc_fine_backward(p, emb, fo, -w.lambda2 * g.d_mu, -w.lambda2 * g.d_log_var, scratch);
      }
      encode_backward(p, cache, d_emb, grad);
      auto [pt, gt] = select_trainable(p, grad, not_discriminator);
      adam_gen.step(pt, gt);
      update_running_stats(p, cache);

      mse_sum += l_mse;
      cse_sum += l_cse;
      gll_sum += l_gll;
      ++steps;
    }
    const double n = static_cast<double>(steps);
    EpochRecord e;
    e.epoch = epoch;
    e.loss_mse = mse_sum / n;
    e.loss_cse = cse_sum / n;
    e.loss_gll = gll_sum / n;
    e.loss_total = total_adapt_loss(w, e.loss_mse, e.loss_cse, e.loss_gll);
    if (use_coarse) e.disc_cse = dcse_sum / n;
    if (use_fine) e.disc_gll = dgll_sum / n;
    measure(e);
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

// ---- evaluation ----------------------------------------------------------------

MetricRecord score_predictions(const Vec& y, const Vec& yhat) {
  MetricRecord m;
  m.mse = mse_loss(y, yhat);
  m.mae = mae(y, yhat);
  try {
    m.r2 = r_squared(y, yhat);
  } catch (const DegenerateInput&) {
    m.r2 = kNotMeasured;
  }
  try {
    m.corr = pearson(y, yhat);
  } catch (const DegenerateInput&) {
    m.corr = 0.0;
    m.corr_degenerate = true;
  }
  const DistributionGap gap = distribution_gap(y, yhat);
  m.hellinger = gap.hellinger;
  m.kl = gap.kl;
  return m;
}

MetricRecord evaluate(const ModelParams& params, const SampleSet& test) {
  require_processed_labeled(test, "evaluate");
  return score_predictions(test.y, predict_set(params, test));
}

double balanced_accuracy(const Vec& y_c, const Vec& prob_target) {
  if (y_c.size() != prob_target.size() || y_c.size() == 0)
    throw std::invalid_argument("balanced_accuracy: size mismatch or empty input");
  double hit[2] = {0, 0}, total[2] = {0, 0};
  for (Eigen::Index i = 0; i < y_c.size(); ++i) {
    const int cls = y_c(i) == 1.0 ? 1 : 0;
    const int pred = prob_target(i) >= 0.5 ? 1 : 0;
    total[cls] += 1.0;
    hit[cls] += pred == cls ? 1.0 : 0.0;
  }
  double acc = 0.0;
  int classes = 0;
  for (int c = 0; c < 2; ++c)
    if (total[c] > 0) {
      acc += hit[c] / total[c];
      ++classes;
    }
  return acc / classes;
}

double coarse_accuracy(const ModelParams& params, const SampleSet& heldout) {
  return balanced_accuracy(domain_labels(heldout), disc_coarse(params, embed_set(params, heldout)));
}

double probe_discriminator(const ModelParams& frozen, const SampleSet& train, const SampleSet& heldout,
                           const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require_trainable_size(train.size(), cfg.validation_fraction, "probe_discriminator");
  RunRngs rngs(seed);
  ModelParams q = frozen;
  std::mt19937_64 init_rng(rngs.init_seed);
  init_uniform(q.coarse_hidden, init_rng);
  init_uniform(q.coarse_out, init_rng);
  for (const auto& l : {"coarse_hidden", "coarse_out"}) q.trainable[l] = true;

  const Mat emb = embed_set(frozen, train);
  const Vec yc = domain_labels(train);
  const auto [tr, va] = split_rows(train.size(), cfg.validation_fraction, rngs.split_seed);
  const Mat emb_va = gather_rows(emb, va);
  const Vec yc_va = gather(yc, va);

  Adam adam({cfg.learning_rate});
  ModelParams grad = q.zeros_like();
  ModelParams best = q;
  double best_ce = cross_entropy(yc_va, disc_coarse(q, emb_va));
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (const auto& b : make_batches(tr, cfg.batch_size, rngs.shuffle)) {
      const Mat e = gather_rows(emb, b);
      const Vec y = gather(yc, b);
      const CoarseOutput co = disc_coarse_forward(q, e);
      zero(grad);
      disc_coarse_backward(q, e, co, cross_entropy_logit_grad(y, co.logit), grad);
      auto [pt, gt] = select_trainable(q, grad, is_coarse);
      adam.step(pt, gt);
    }
    const double ce = cross_entropy(yc_va, disc_coarse(q, emb_va));
    if (ce < best_ce) {
      best_ce = ce;
      best = q;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return balanced_accuracy(domain_labels(heldout), disc_coarse(best, embed_set(best, heldout)));
}

}  // namespace udama
