#include "udama/features.hpp"
#include "udama/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace udama {
namespace {

const std::set<std::string> kKnownChannels = {"accel", "HR", "HRV", "ENMO"};
const std::set<std::string> kKnownMeta = {"age",           "sex",      "height",  "weight",    "BMI",       "RHR", "month",
                                          "sedentary_min", "MVPA_min", "VPA_min", "month_sin", "month_cos"};

std::size_t index_of(const std::vector<std::string>& names, const std::string& name, const char* what) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::invalid_argument(std::string(what) + ": input lacks '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

void check_unique(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen;
  for (const auto& n : names)
    if (!seen.insert(n).second) throw std::invalid_argument(std::string(what) + ": duplicate name '" + n + "'");
}

}  // namespace

void FeatureLayout::validate() const {
  if (downsample_ratio < 1) throw std::invalid_argument("FeatureLayout: downsample_ratio must be >= 1");
  if (ts_channels.empty()) throw std::invalid_argument("FeatureLayout: no time-series channels");
  check_unique(ts_channels, "FeatureLayout.ts_channels");
  check_unique(meta_fields, "FeatureLayout.meta_fields");
  for (const auto& c : ts_channels)
    if (!kKnownChannels.count(c)) throw std::invalid_argument("FeatureLayout: unknown channel '" + c + "'");
  for (const auto& f : meta_fields)
    if (!kKnownMeta.count(f)) throw std::invalid_argument("FeatureLayout: unknown metadata field '" + f + "'");
}

void IntensityThresholds::validate() const {
  if (!(sedentary_below <= mvpa_at_or_above && mvpa_at_or_above <= vigorous_at_or_above))
    throw std::invalid_argument("IntensityThresholds: need sedentary_below <= mvpa_at_or_above <= vigorous_at_or_above");
}

std::vector<double> downsample(std::span<const double> series, std::size_t ratio) {
  if (ratio == 0) throw std::invalid_argument("downsample: ratio must be positive");
  if (series.empty()) throw std::invalid_argument("downsample: empty series");
  if (series.size() % ratio != 0) throw std::invalid_argument("downsample: length not divisible by ratio");
  std::vector<double> out(series.size() / ratio);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < ratio; ++j) acc += series[k * ratio + j];
    out[k] = acc / static_cast<double>(ratio);
  }
  return out;
}

std::pair<double, double> encode_month(int month) {
  if (month < 1 || month > 12) throw std::invalid_argument("encode_month: month must lie in 1..12");
  const double angle = 2.0 * std::numbers::pi * month / 12.0;
  return {std::sin(angle), std::cos(angle)};
}

double accel_to_mets(double accel_j_per_min_kg) {
  if (!(accel_j_per_min_kg >= 0.0)) throw std::invalid_argument("accel_to_mets: negative acceleration");
  return accel_j_per_min_kg / kJoulesPerMet;
}

IntensityCounts classify_intensity(std::span<const double> mets, const IntensityThresholds& t) {
  t.validate();
  IntensityCounts c;
  for (double m : mets) {
    if (!(m >= 0.0)) throw std::invalid_argument("classify_intensity: negative MET value");
    if (m < t.sedentary_below) ++c.sedentary;
    if (m >= t.mvpa_at_or_above) ++c.mvpa;
    if (m >= t.vigorous_at_or_above) ++c.vigorous;
  }
  return c;
}

double derive_enmo(double accel_mg) {
  if (!(accel_mg >= 0.0)) throw std::invalid_argument("derive_enmo: negative acceleration");
  return accel_mg / 0.0060321 + 0.057;
}

MinMaxScaler MinMaxScaler::fit(const Eigen::MatrixXd& m) {
  if (m.rows() == 0) throw std::invalid_argument("MinMaxScaler::fit: empty matrix");
  return MinMaxScaler(m.colwise().minCoeff().transpose(), m.colwise().maxCoeff().transpose());
}

Eigen::MatrixXd MinMaxScaler::transform(const Eigen::MatrixXd& m) const {
  if (m.cols() != min_.size()) throw std::invalid_argument("MinMaxScaler::transform: column count mismatch");
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double range = max_(c) - min_(c);
    if (range > 0.0)
      out.col(c) = (m.col(c).array() - min_(c)) / range;
    else
      out.col(c).setZero();
  }
  return out;
}

namespace {

SampleSet scale_series(const SampleSet& set) {
  if (set.size() == 0) throw std::invalid_argument("minmax_scale: empty set");
  SampleSet out = set;
  const auto steps = set.X.steps();
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t c = 0; c < set.X.channels(); ++c) {
      double lo = set.X.at(i, 0, c), hi = lo;
      for (std::size_t t = 1; t < steps; ++t) {
        lo = std::min(lo, set.X.at(i, t, c));
        hi = std::max(hi, set.X.at(i, t, c));
      }
      const double range = hi - lo;
      for (std::size_t t = 0; t < steps; ++t)
        out.X.at(i, t, c) = range > 0.0 ? (set.X.at(i, t, c) - lo) / range : 0.0;
    }
  }
  return out;
}

}  // namespace

SampleSet minmax_scale(const SampleSet& set, MinMaxScaler* fitted) {
  SampleSet out = scale_series(set);
  const MinMaxScaler scaler = MinMaxScaler::fit(set.M);
  out.M = scaler.transform(set.M);
  if (fitted) *fitted = scaler;
  return out;
}

SampleSet minmax_scale(const SampleSet& set, const MinMaxScaler& fitted) {
  SampleSet out = scale_series(set);
  out.M = fitted.transform(set.M);
  return out;
}

FeaturePipeline::FeaturePipeline(FeatureLayout layout, IntensityThresholds thresholds)
    : layout_(std::move(layout)), thresholds_(thresholds) {
  layout_.validate();
  thresholds_.validate();
}

SampleSet FeaturePipeline::unscaled(const SampleSet& raw) const {
  if (raw.processed) throw std::invalid_argument("assemble_features: input is already processed");
  if (raw.size() == 0) throw std::invalid_argument("assemble_features: empty set");
  const std::size_t len = raw.X.steps();
  const std::size_t ratio = layout_.downsample_ratio;
  if (len == 0 || len % ratio != 0)
    throw std::invalid_argument("assemble_features: series length not divisible by the downsample ratio");

  const std::size_t accel_idx = index_of(raw.ts_channels, "accel", "assemble_features");
  const std::size_t month_idx = index_of(raw.meta_fields, "month", "assemble_features");

  SampleSet out;
  out.grade = raw.grade;
  out.processed = false;
  out.domain = raw.domain;
  out.y = raw.y;
  out.ts_channels = layout_.ts_channels;
  out.meta_fields = layout_.meta_fields;
  out.X = SeriesTensor(raw.size(), len / ratio, layout_.ts_channels.size());
  out.M.resize(static_cast<Eigen::Index>(raw.size()), static_cast<Eigen::Index>(layout_.meta_fields.size()));

  const double minutes_to_daily = 1440.0 / static_cast<double>(len);
  std::vector<double> buf(len);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (std::size_t c = 0; c < layout_.ts_channels.size(); ++c) {
      const std::string& name = layout_.ts_channels[c];
      if (name == "ENMO") {
        for (std::size_t t = 0; t < len; ++t) buf[t] = derive_enmo(raw.X.at(i, t, accel_idx));
      } else {
        buf = raw.X.channel(i, index_of(raw.ts_channels, name, "assemble_features"));
      }
      const auto reduced = downsample(buf, ratio);
      for (std::size_t t = 0; t < reduced.size(); ++t) out.X.at(i, t, c) = reduced[t];
    }

    for (std::size_t t = 0; t < len; ++t) buf[t] = accel_to_mets(raw.X.at(i, t, accel_idx));
    const IntensityCounts counts = classify_intensity(buf, thresholds_);
    const auto [msin, mcos] = encode_month(static_cast<int>(std::lround(raw.M(row, static_cast<Eigen::Index>(month_idx)))));

    for (std::size_t f = 0; f < layout_.meta_fields.size(); ++f) {
      const std::string& name = layout_.meta_fields[f];
      double v;
      if (name == "sedentary_min")
        v = static_cast<double>(counts.sedentary) * minutes_to_daily;
      else if (name == "MVPA_min")
        v = static_cast<double>(counts.mvpa) * minutes_to_daily;
      else if (name == "VPA_min")
        v = static_cast<double>(counts.vigorous) * minutes_to_daily;
      else if (name == "month_sin")
        v = msin;
      else if (name == "month_cos")
        v = mcos;
      else
        v = raw.M(row, static_cast<Eigen::Index>(index_of(raw.meta_fields, name, "assemble_features")));
      out.M(row, static_cast<Eigen::Index>(f)) = v;
    }
  }
  return out;
}

SampleSet FeaturePipeline::fit_transform(const SampleSet& raw) {
  SampleSet out = minmax_scale(unscaled(raw), &scaler_);
  out.processed = true;
  return out;
}

SampleSet FeaturePipeline::transform(const SampleSet& raw) const {
  if (!scaler_.fitted()) throw InvalidState("FeaturePipeline::transform: pipeline not fitted");
  SampleSet out = minmax_scale(unscaled(raw), scaler_);
  out.processed = true;
  return out;
}

SampleSet assemble_features(const SampleSet& raw, const FeatureLayout& layout, const IntensityThresholds& thresholds) {
  FeaturePipeline pipeline(layout, thresholds);
  return pipeline.fit_transform(raw);
}

}  // namespace udama
