#include "udama/objectives.hpp"

#include "udama/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace udama {
namespace {

void check_pair(VecRef a, VecRef b, const char* who, Eigen::Index min_len = 1) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(who) + ": length mismatch");
  if (a.size() < min_len) throw std::invalid_argument(std::string(who) + ": too few elements");
}

void check_edges(const Histogram& a, const Histogram& b, const char* who) {
  if (a.edges != b.edges) throw std::invalid_argument(std::string(who) + ": histograms have different bin edges");
}

}  // namespace

double mse_loss(VecRef y, VecRef yhat) {
  check_pair(y, yhat, "mse_loss");
  return (y - yhat).squaredNorm() / static_cast<double>(y.size());
}

double mae(VecRef y, VecRef yhat) {
  check_pair(y, yhat, "mae");
  return (y - yhat).cwiseAbs().mean();
}

Eigen::VectorXd mse_grad(VecRef y, VecRef yhat) {
  check_pair(y, yhat, "mse_grad");
  return 2.0 * (yhat - y) / static_cast<double>(y.size());
}

double r_squared(VecRef y, VecRef yhat) {
  check_pair(y, yhat, "r_squared", 2);
  const double ss_tot = (y.array() - y.mean()).square().sum();
  if (ss_tot == 0.0) throw DegenerateInput("r_squared: labels have zero variance");
  return 1.0 - (y - yhat).squaredNorm() / ss_tot;
}

double pearson(VecRef a, VecRef b) {
  check_pair(a, b, "pearson", 2);
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double sa = da.square().sum(), sb = db.square().sum();
  if (sa == 0.0 || sb == 0.0) throw DegenerateInput("pearson: zero variance input");
  return std::clamp((da * db).sum() / std::sqrt(sa * sb), -1.0, 1.0);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double cross_entropy(VecRef y, VecRef p) {
  check_pair(y, p, "cross_entropy");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double q = std::clamp(p(i), kProbClamp, 1.0 - kProbClamp);
    acc += y(i) * std::log(q) + (1.0 - y(i)) * std::log(1.0 - q);
  }
  return -acc / static_cast<double>(y.size());
}

Eigen::VectorXd cross_entropy_logit_grad(VecRef y, VecRef logits) {
  check_pair(y, logits, "cross_entropy_logit_grad");
  Eigen::VectorXd g(y.size());
  const double inv_n = 1.0 / static_cast<double>(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double p = sigmoid(logits(i));
    // Zero gradient where the clamp is active, matching the forward value.
    g(i) = (p < kProbClamp || p > 1.0 - kProbClamp) ? 0.0 : (p - y(i)) * inv_n;
  }
  return g;
}

double gaussian_nll(double target, double mu, double var, double floor) {
  if (!(var >= floor)) throw std::invalid_argument("gaussian_nll: variance below floor");
  const double r = target - mu;
  return 0.5 * (std::log(var) + r * r / var);
}

double gaussian_nll(VecRef target, VecRef mu, VecRef var, double floor) {
  check_pair(target, mu, "gaussian_nll");
  check_pair(target, var, "gaussian_nll");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) acc += gaussian_nll(target(i), mu(i), var(i), floor);
  return acc / static_cast<double>(target.size());
}

GnllGrad gaussian_nll_grad(double target, double mu, double log_var, double floor) {
  const double e = std::exp(log_var);
  const double var = e + floor;
  const double r = target - mu;
  GnllGrad g;
  g.d_mu = -r / var;
  g.d_log_var = 0.5 * (1.0 / var - r * r / (var * var)) * e;
  return g;
}

void LossWeights::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("LossWeights: alpha must be > 0");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw std::invalid_argument("LossWeights: lambdas must be >= 0");
  if (std::abs(lambda1 + lambda2 - 1.0) > 1e-12) throw std::invalid_argument("LossWeights: lambda1 + lambda2 must equal 1");
}

double total_adapt_loss(const LossWeights& w, double l_mse, double l_cse, double l_gll) {
  w.validate();
  return w.alpha * l_mse - w.lambda1 * l_cse - w.lambda2 * l_gll;
}

Histogram build_histogram(VecRef values, std::size_t k_bins, double lo, double hi) {
  if (values.size() == 0) throw std::invalid_argument("build_histogram: empty sample");
  if (k_bins == 0) throw std::invalid_argument("build_histogram: k_bins must be positive");
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw std::invalid_argument("build_histogram: need lo < hi");
  Histogram h;
  h.edges.resize(k_bins + 1);
  const double width = (hi - lo) / static_cast<double>(k_bins);
  for (std::size_t k = 0; k <= k_bins; ++k) h.edges[k] = lo + width * static_cast<double>(k);
  h.edges.back() = hi;
  std::vector<double> counts(k_bins, 0.0);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double v = values(i);
    if (std::isnan(v)) throw std::invalid_argument("build_histogram: NaN value");
    const double pos = std::floor((v - lo) / width);
    const auto bin = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(k_bins - 1)));
    counts[bin] += 1.0;
  }
  const double n = static_cast<double>(values.size());
  h.mass.resize(k_bins);
  for (std::size_t k = 0; k < k_bins; ++k) h.mass[k] = counts[k] / n;
  return h;
}

std::pair<double, double> union_range(VecRef a, VecRef b) {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("union_range: empty sample");
  double lo = std::min(a.minCoeff(), b.minCoeff());
  double hi = std::max(a.maxCoeff(), b.maxCoeff());
  if (!(lo < hi)) {
    lo -= 0.5;
    hi += 0.5;
  }
  return {lo, hi};
}

double hellinger(const Histogram& a, const Histogram& b) {
  check_edges(a, b, "hellinger");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.bins(); ++k) {
    const double d = std::sqrt(a.mass[k]) - std::sqrt(b.mass[k]);
    acc += d * d;
  }
  return std::clamp(std::sqrt(0.5 * acc), 0.0, 1.0);
}

double kl_divergence(const Histogram& a, const Histogram& b) {
  check_edges(a, b, "kl_divergence");
  // Both sides are smoothed alike, so identical histograms give exactly zero.
  double total_a = 0.0, total_b = 0.0;
  for (std::size_t k = 0; k < a.bins(); ++k) {
    total_a += a.mass[k] + kKlSmoothing;
    total_b += b.mass[k] + kKlSmoothing;
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < a.bins(); ++k) {
    const double p = (a.mass[k] + kKlSmoothing) / total_a;
    const double q = (b.mass[k] + kKlSmoothing) / total_b;
    acc += p * std::log(p / q);
  }
  return std::max(acc, 0.0);
}

DistributionGap distribution_gap(VecRef reference, VecRef other, std::size_t k_bins) {
  const auto [lo, hi] = union_range(reference, other);
  const Histogram a = build_histogram(reference, k_bins, lo, hi);
  const Histogram b = build_histogram(other, k_bins, lo, hi);
  return {hellinger(a, b), kl_divergence(a, b)};
}

}  // namespace udama
