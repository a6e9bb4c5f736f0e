#pragma once

#include "udama/netgraph.hpp"
#include "udama/objectives.hpp"
#include "udama/optim.hpp"
#include "udama/sample_set.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace udama {

/// What the fine discriminator's Gaussian NLL scores: the sample's domain
/// label mean (default) or the sample's own training label.
enum class GnllTarget { domain_mean, own_label };

struct TrainConfig {
  NetConfig net;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  LossWeights weights;
  double validation_fraction = 0.2;
  GnllTarget gnll_target = GnllTarget::domain_mean;

  void validate() const;
};

/// Per-sample domain labels: coarse y_c (0 = source, 1 = target) and the
/// fine y_d = (mean, variance) of the sample's domain label distribution.
struct DomainAssignment {
  Vec y_c;
  Vec mean;  // empty until assign_distribution_labels()
  Vec var;

  std::size_t size() const { return static_cast<std::size_t>(y_c.size()); }
  bool has_distribution() const { return mean.size() == y_c.size() && var.size() == y_c.size() && y_c.size() > 0; }
  DomainAssignment subset(std::span<const std::size_t> rows) const;
};

inline constexpr double kNotMeasured = std::numeric_limits<double>::quiet_NaN();

/// One line of a training trace. Epoch 0 is the state before any update.
struct EpochRecord {
  std::size_t epoch = 0;
  double loss_mse = 0.0;  // mean over the epoch's update steps
  double loss_cse = 0.0;
  double loss_gll = 0.0;
  double loss_total = 0.0;  // alpha*mse - lambda1*cse - lambda2*gll for adaptation, mse otherwise
  double aux = 0.0;         // method-specific term (CORAL distance, critic estimate, reconstruction)
  double disc_cse = kNotMeasured;  // discriminator-step losses
  double disc_gll = kNotMeasured;
  double val_mse = 0.0;
  double coarse_acc = kNotMeasured;  // balanced accuracy of D_c on held-out mixed data
};

struct TrainTrace {
  std::string phase;
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // epoch whose parameters are returned
  std::size_t stop_epoch = 0;  // last epoch run

  const EpochRecord& best() const { return epochs.at(best_epoch); }
  /// One JSON object per epoch; non-measured values are written as null.
  void write_jsonl(std::ostream& os) const;
};

struct TrainResult {
  ModelParams params;
  TrainTrace trace;
};

/// Seeded split of 0..n-1 into (train, validation); validation gets
/// round(frac * n) rows, at least one.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(std::size_t n, double frac,
                                                                         std::uint64_t seed);

/// Minimum-size check shared by all supervised entry points.
void require_trainable_size(std::size_t n, double validation_fraction, const char* what);

/// MSE training of the trainable encoder layers and G_y with early stopping on
/// a held-out validation split of `train`. Discriminator heads are untouched.
TrainResult fit_regression(ModelParams init, const SampleSet& train, const TrainConfig& cfg, std::uint64_t seed,
                           const std::string& phase);

/// Fresh network sized for `data`, predictor bias at the mean label (when
/// labelled). Shared by every from-scratch training path.
ModelParams init_for(const TrainConfig& cfg, const SampleSet& data, std::uint64_t seed);

/// Fresh network trained on the silver source; the predictor bias starts at
/// the mean training label.
TrainResult pretrain(const SampleSet& source, const TrainConfig& cfg, std::uint64_t seed);

/// round-half-up(frac * n_target)
std::size_t injection_count(double frac, std::size_t n_target);

/// Target train plus a uniform draw (without replacement) of source samples.
std::pair<SampleSet, DomainAssignment> mix_domains(const SampleSet& target_train, const SampleSet& source_pool,
                                                   double injection_frac_of_target, std::uint64_t seed);

/// Fills y_d with each domain's label mean and population variance.
DomainAssignment assign_distribution_labels(const SampleSet& mixed, const DomainAssignment& assignment);

/// Alternating adversarial adaptation. `probe_set`, if given, supplies the
/// held-out domain-labelled samples for the coarse accuracy column; otherwise
/// a validation share of each domain in `mixed` is held out for it.
/// lambda1 = 0 or lambda2 = 0 removes the corresponding discriminator.
TrainResult adapt_udama(const ModelParams& pretrained, const SampleSet& mixed, const DomainAssignment& assignment,
                        const TrainConfig& cfg, std::uint64_t seed, const SampleSet* probe_set = nullptr);

/// MSE-only fine-tuning of the unfrozen layers on target data.
TrainResult finetune(const ModelParams& pretrained, const SampleSet& target_train, const TrainConfig& cfg,
                     std::uint64_t seed);

/// Metrics of predictions on a labelled test set. A degenerate correlation is
/// flagged rather than thrown.
MetricRecord evaluate(const ModelParams& params, const SampleSet& test);
MetricRecord score_predictions(const Vec& y, const Vec& yhat);

/// 0.5 * (TPR + TNR) at threshold 0.5; classes with no members are skipped.
double balanced_accuracy(const Vec& y_c, const Vec& prob_target);

/// Balanced held-out accuracy of the current D_c on `heldout` (domain tags).
double coarse_accuracy(const ModelParams& params, const SampleSet& heldout);

/// Trains a fresh coarse discriminator on frozen eval-mode embeddings of
/// `train` and reports its balanced accuracy on `heldout`.
double probe_discriminator(const ModelParams& frozen, const SampleSet& train, const SampleSet& heldout,
                           const TrainConfig& cfg, std::uint64_t seed);

Vec domain_labels(const SampleSet& set);

}  // namespace udama
