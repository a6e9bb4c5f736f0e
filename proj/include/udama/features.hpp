#pragma once

#include "udama/sample_set.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace udama {

/// Which channels and metadata columns make up the model input, in order.
///
/// Time-series channels may be any raw channel (accel, HR, HRV) or the
/// derived ENMO. Metadata fields may be any raw column (age, sex, height,
/// weight, BMI, RHR, month) or one of the derived sedentary_min, MVPA_min,
/// VPA_min (daily minutes from the accelerometer) and month_sin, month_cos.
struct FeatureLayout {
  std::vector<std::string> ts_channels = {"accel", "HR", "HRV", "ENMO"};
  std::vector<std::string> meta_fields = {"age",     "sex",      "height",  "weight",    "BMI",      "RHR",
                                          "sedentary_min", "MVPA_min", "VPA_min", "month_sin", "month_cos"};
  std::size_t downsample_ratio = 15;

  void validate() const;
};

/// MET cut points; boundaries are inclusive on the upper classes.
struct IntensityThresholds {
  double sedentary_below = 1.0;
  double mvpa_at_or_above = 1.0;
  double vigorous_at_or_above = 4.15;

  void validate() const;
};

struct IntensityCounts {
  std::size_t sedentary = 0;
  std::size_t mvpa = 0;
  std::size_t vigorous = 0;

  bool operator==(const IntensityCounts&) const = default;
};

inline constexpr double kJoulesPerMet = 71.0;

/// Block means of length `ratio`.
std::vector<double> downsample(std::span<const double> series, std::size_t ratio);
std::pair<double, double> encode_month(int month);
double accel_to_mets(double accel_j_per_min_kg);
IntensityCounts classify_intensity(std::span<const double> mets, const IntensityThresholds& t = {});
double derive_enmo(double accel_mg);

/// Column-wise min-max transform fitted on one matrix and reusable on others.
/// Constant columns map to zero.
class MinMaxScaler {
 public:
  static MinMaxScaler fit(const Eigen::MatrixXd& m);
  MinMaxScaler() = default;
  MinMaxScaler(Eigen::VectorXd min, Eigen::VectorXd max) : min_(std::move(min)), max_(std::move(max)) {}

  Eigen::MatrixXd transform(const Eigen::MatrixXd& m) const;
  const Eigen::VectorXd& min() const { return min_; }
  const Eigen::VectorXd& max() const { return max_; }
  bool fitted() const { return min_.size() > 0; }

 private:
  Eigen::VectorXd min_, max_;
};

/// Scales every series per sample and channel to [0,1] and fits a column
/// scaler on the metadata. The fitted scaler is written to `fitted` if given.
SampleSet minmax_scale(const SampleSet& set, MinMaxScaler* fitted = nullptr);
/// Same, reusing an already fitted metadata scaler (held-out data).
SampleSet minmax_scale(const SampleSet& set, const MinMaxScaler& fitted);

/// Raw cohort -> model-ready features. `fit_transform` fits the metadata
/// scaler; `transform` applies it to other cohorts.
class FeaturePipeline {
 public:
  explicit FeaturePipeline(FeatureLayout layout = {}, IntensityThresholds thresholds = {});

  SampleSet fit_transform(const SampleSet& raw);
  SampleSet transform(const SampleSet& raw) const;

  const FeatureLayout& layout() const { return layout_; }
  const MinMaxScaler& scaler() const { return scaler_; }

 private:
  SampleSet unscaled(const SampleSet& raw) const;

  FeatureLayout layout_;
  IntensityThresholds thresholds_;
  MinMaxScaler scaler_;
};

SampleSet assemble_features(const SampleSet& raw, const FeatureLayout& layout = {},
                            const IntensityThresholds& thresholds = {});

}  // namespace udama
