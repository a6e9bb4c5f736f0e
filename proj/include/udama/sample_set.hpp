#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace udama {

enum class Domain : std::uint8_t { source = 0, target = 1 };
enum class LabelGrade : std::uint8_t { gold, silver };

const char* to_string(Domain d);
const char* to_string(LabelGrade g);

/// Dense N x T x F tensor, sample-major then time then channel.
class SeriesTensor {
 public:
  SeriesTensor() = default;
  SeriesTensor(std::size_t n, std::size_t t, std::size_t f, double fill = 0.0)
      : n_(n), t_(t), f_(f), data_(n * t * f, fill) {}

  std::size_t samples() const { return n_; }
  std::size_t steps() const { return t_; }
  std::size_t channels() const { return f_; }

  double& at(std::size_t i, std::size_t t, std::size_t c) { return data_[(i * t_ + t) * f_ + c]; }
  double at(std::size_t i, std::size_t t, std::size_t c) const { return data_[(i * t_ + t) * f_ + c]; }

  std::span<double> sample(std::size_t i) { return {data_.data() + i * t_ * f_, t_ * f_}; }
  std::span<const double> sample(std::size_t i) const { return {data_.data() + i * t_ * f_, t_ * f_}; }

  /// Copy channel c of sample i into a contiguous vector.
  std::vector<double> channel(std::size_t i, std::size_t c) const;

  const std::vector<double>& raw() const { return data_; }
  std::vector<double>& raw() { return data_; }

  bool operator==(const SeriesTensor&) const = default;

 private:
  std::size_t n_ = 0, t_ = 0, f_ = 0;
  std::vector<double> data_;
};

/// A cohort: time series X, metadata M, labels y and per-sample domain tags.
struct SampleSet {
  SeriesTensor X;
  Eigen::MatrixXd M;  // N x F_meta
  Eigen::VectorXd y;  // VO2max, ml O2/min/kg
  std::vector<Domain> domain;
  LabelGrade grade = LabelGrade::gold;
  bool processed = false;
  bool labeled = true;  // false: y holds NaN and must not be read
  std::vector<std::string> ts_channels;
  std::vector<std::string> meta_fields;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }

  /// Throws std::invalid_argument on inconsistent shapes or non-finite values.
  void validate() const;

  SampleSet subset(std::span<const std::size_t> rows) const;

  /// Row-wise concatenation; grades must match unless `mixed_grade` is set,
  /// in which case the result keeps `a.grade`.
  static SampleSet concat(const SampleSet& a, const SampleSet& b, bool mixed_grade = false);

  bool operator==(const SampleSet& o) const;
};

/// Copy with every label replaced by NaN. Training paths that may only see
/// inputs (target data of unsupervised baselines, test partitions) take this view.
SampleSet strip_labels(const SampleSet& set);

}  // namespace udama
