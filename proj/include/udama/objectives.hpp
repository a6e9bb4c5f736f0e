#pragma once

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace udama {

using VecRef = Eigen::Ref<const Eigen::VectorXd>;

// ---- regression losses and metrics -------------------------------------

double mse_loss(VecRef y, VecRef yhat);
double mae(VecRef y, VecRef yhat);
/// d mse / d yhat.
Eigen::VectorXd mse_grad(VecRef y, VecRef yhat);

/// 1 - SS_res / SS_tot. Throws DegenerateInput when y is constant.
double r_squared(VecRef y, VecRef yhat);
/// Centered Pearson correlation. Throws DegenerateInput when either side is constant.
double pearson(VecRef a, VecRef b);

// ---- domain-discriminator losses ---------------------------------------

inline constexpr double kProbClamp = 1e-7;

/// -mean[y ln p + (1-y) ln(1-p)], p clamped to [1e-7, 1-1e-7].
double cross_entropy(VecRef y, VecRef p);
/// Gradient of cross_entropy(y, sigmoid(logits)) with respect to the logits.
Eigen::VectorXd cross_entropy_logit_grad(VecRef y, VecRef logits);

double sigmoid(double x);

/// 1/2 (ln var + (t - mu)^2 / var); the 1/2 ln(2 pi) constant is omitted.
/// Throws std::invalid_argument when var < floor.
double gaussian_nll(double target, double mu, double var, double floor = 1e-6);
/// Batch mean of gaussian_nll.
double gaussian_nll(VecRef target, VecRef mu, VecRef var, double floor = 1e-6);

/// Partial derivatives of gaussian_nll where var = exp(log_var) + floor.
struct GnllGrad {
  double d_mu = 0.0;
  double d_log_var = 0.0;
};
GnllGrad gaussian_nll_grad(double target, double mu, double log_var, double floor = 1e-6);

// ---- total adaptation objective ----------------------------------------

struct LossWeights {
  double alpha = 0.01;
  double lambda1 = 0.9;
  double lambda2 = 0.1;

  /// alpha > 0, lambdas >= 0 and summing to one within 1e-12.
  void validate() const;
};

/// alpha * l_mse - lambda1 * l_cse - lambda2 * l_gll.
double total_adapt_loss(const LossWeights& w, double l_mse, double l_cse, double l_gll);

// ---- histograms and distances ------------------------------------------

struct Histogram {
  std::vector<double> edges;  // K + 1, strictly increasing
  std::vector<double> mass;   // K, sums to one

  std::size_t bins() const { return mass.size(); }
};

inline constexpr std::size_t kDefaultHistogramBins = 20;
inline constexpr double kKlSmoothing = 1e-9;

/// Equal-width bins over [lo, hi]; values outside are clipped into the edge bins.
Histogram build_histogram(VecRef values, std::size_t k_bins, double lo, double hi);
/// [min, max] over both samples, widened by 0.5 on each side when degenerate.
std::pair<double, double> union_range(VecRef a, VecRef b);

/// sqrt(1/2 sum (sqrt a - sqrt b)^2), in [0, 1].
double hellinger(const Histogram& a, const Histogram& b);
/// sum a ln(a / b) with both sides smoothed by +1e-9 per bin and renormalised.
double kl_divergence(const Histogram& a, const Histogram& b);

/// Shared-range histograms of two samples followed by the two distances.
struct DistributionGap {
  double hellinger = 0.0;
  double kl = 0.0;
};
DistributionGap distribution_gap(VecRef reference, VecRef other, std::size_t k_bins = kDefaultHistogramBins);

// ---- evaluation record -------------------------------------------------

struct MetricRecord {
  double mse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
  double corr = 0.0;
  bool corr_degenerate = false;  // prediction or label variance was zero; corr is then 0 and must be ignored
  double hellinger = 0.0;
  double kl = 0.0;
};

}  // namespace udama
