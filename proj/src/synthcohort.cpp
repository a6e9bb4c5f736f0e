#include "udama/synthcohort.hpp"

#include "udama/errors.hpp"
#include "udama/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace udama {
namespace {

// Fixed reference moments that standardise the label drivers.
constexpr double kRefAge = 47.0, kRefAgeStd = 7.5;
constexpr double kRefRhr = 62.0, kRefRhrStd = 8.5;
constexpr double kRefMvpa = 35.1, kRefMvpaStd = 22.5;
constexpr double kRefVpa = 3.3, kRefVpaStd = 12.6;
constexpr double kRefBmi = 26.5, kRefBmiStd = 4.0;
constexpr double kLabelMin = 15.0, kLabelMax = 70.0;
// Unexplained share of the label std never drops below this.
constexpr double kMinNoiseShare = 0.3;
constexpr std::size_t kPilotDraws = 4000;
constexpr std::uint64_t kPilotSeed = 0x9e3779b97f4a7c15ULL;
constexpr double kMetJoules = 71.0;  // J/min/kg per MET

void check_moments(const Moments& m, const std::string& what) {
  if (!std::isfinite(m.mean) || !std::isfinite(m.std)) throw std::invalid_argument("CohortSpec: non-finite " + what);
  if (m.std < 0.0) throw std::invalid_argument("CohortSpec: negative std for " + what);
}

void check_sex(const SexParams& p, const std::string& sex) {
  check_moments(p.age, sex + ".age");
  check_moments(p.height, sex + ".height");
  check_moments(p.weight, sex + ".weight");
  check_moments(p.rhr, sex + ".rhr");
  check_moments(p.mvpa, sex + ".mvpa");
  check_moments(p.vpa, sex + ".vpa");
  check_moments(p.vo2max, sex + ".vo2max");
  if (p.mvpa.mean <= 0.0 || p.vpa.mean <= 0.0)
    throw std::invalid_argument("CohortSpec: " + sex + " activity means must be positive");
}

/// Gamma draw parameterised by mean and std; keeps activity minutes nonnegative
/// with the requested first two moments.
double gamma_draw(std::mt19937_64& rng, const Moments& m) {
  if (m.std == 0.0) return m.mean;
  const double shape = (m.mean * m.mean) / (m.std * m.std);
  const double scale = (m.std * m.std) / m.mean;
  return std::gamma_distribution<double>(shape, scale)(rng);
}

double normal_draw(std::mt19937_64& rng, const Moments& m) {
  if (m.std == 0.0) return m.mean;
  return std::normal_distribution<double>(m.mean, m.std)(rng);
}

/// Marks `count` minutes of `busy` as active, in bouts of 5..20 minutes.
void place_bouts(std::mt19937_64& rng, std::vector<std::uint8_t>& busy, std::size_t count, std::uint8_t tag) {
  const std::size_t len = busy.size();
  std::uniform_int_distribution<std::size_t> start_dist(0, len - 1);
  std::uniform_int_distribution<std::size_t> bout_dist(5, 20);
  std::size_t placed = 0;
  int attempts = 0;
  while (placed < count && attempts < 1000) {
    ++attempts;
    const std::size_t start = start_dist(rng);
    const std::size_t bout = std::min(bout_dist(rng), count - placed);
    for (std::size_t k = 0; k < bout && start + k < len && placed < count; ++k) {
      if (busy[start + k] == 0) {
        busy[start + k] = tag;
        ++placed;
      }
    }
  }
  for (std::size_t t = 0; t < len && placed < count; ++t) {
    if (busy[t] == 0) {
      busy[t] = tag;
      ++placed;
    }
  }
}

struct Person {
  bool male = false;
  double age = 0.0, height = 0.0, weight = 0.0, rhr = 0.0;
  std::size_t n_mvpa = 0, n_vig = 0;  // active minutes placed in the series
  int month = 1;

  LabelDrivers drivers(double days) const {
    return {age, rhr, static_cast<double>(n_mvpa) / days, static_cast<double>(n_vig) / days,
            weight / (height * height)};
  }
};

Person draw_person(std::mt19937_64& rng, const SexParams& p, bool male, std::size_t len) {
  const double days = static_cast<double>(len) / 1440.0;
  Person q;
  q.male = male;
  q.age = std::clamp(normal_draw(rng, p.age), 18.0, 90.0);
  q.height = std::clamp(normal_draw(rng, p.height), 1.3, 2.2);
  q.weight = std::clamp(normal_draw(rng, p.weight), 35.0, 200.0);
  q.rhr = std::clamp(normal_draw(rng, p.rhr), 35.0, 110.0);
  const double mvpa_target = gamma_draw(rng, p.mvpa);
  const double vpa_target = std::min(gamma_draw(rng, p.vpa), mvpa_target);
  q.month = std::uniform_int_distribution<int>(1, 12)(rng);
  q.n_vig = std::min<std::size_t>(len, static_cast<std::size_t>(std::lround(vpa_target * days)));
  q.n_mvpa = std::min<std::size_t>(
      len, std::max<std::size_t>(q.n_vig, static_cast<std::size_t>(std::lround(mvpa_target * days))));
  return q;
}

/// Per-sex base and noise std that make the labels reproduce the sex's
/// VO2max moments, from a fixed-seed pilot draw of the drivers.
struct SexCalibration {
  double base = 0.0;
  double noise_std = 0.0;
};

SexCalibration calibrate_sex(const CohortSpec& spec, bool male) {
  const SexParams& p = male ? spec.male : spec.female;
  const double days = static_cast<double>(spec.series_length_raw) / 1440.0;
  std::mt19937_64 rng(kPilotSeed);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t k = 0; k < kPilotDraws; ++k) {
    const double g = ground_truth_mean(spec.label, draw_person(rng, p, male, spec.series_length_raw).drivers(days));
    sum += g;
    sum_sq += g * g;
  }
  const double n = static_cast<double>(kPilotDraws);
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  const double target_var = p.vo2max.std * p.vo2max.std;
  const double floor = kMinNoiseShare * p.vo2max.std;
  return {p.vo2max.mean - mean, std::max(floor, std::sqrt(std::max(0.0, target_var - var)))};
}

}  // namespace

void CohortSpec::validate(std::size_t downsample_ratio) const {
  if (!std::isfinite(male_frac) || male_frac < 0.0 || male_frac > 1.0)
    throw std::invalid_argument("CohortSpec: male_frac must lie in [0,1]");
  check_sex(male, "male");
  check_sex(female, "female");
  if (series_length_raw == 0) throw std::invalid_argument("CohortSpec: series_length_raw must be positive");
  if (downsample_ratio == 0 || series_length_raw % downsample_ratio != 0)
    throw std::invalid_argument("CohortSpec: series_length_raw not divisible by the downsample ratio");
  for (double s : ts_noise_std)
    if (!std::isfinite(s) || s < 0.0) throw std::invalid_argument("CohortSpec: ts_noise_std must be finite and >= 0");
  label.validate();
}

void LabelModel::validate() const {
  for (double w : {age, rhr, mvpa, vpa, bmi})
    if (!std::isfinite(w)) throw std::invalid_argument("LabelModel: non-finite weight");
  if (age > 0.0 || rhr > 0.0 || bmi > 0.0) throw std::invalid_argument("LabelModel: age, rhr and bmi weights must be <= 0");
  if (mvpa < 0.0 || vpa < 0.0) throw std::invalid_argument("LabelModel: activity weights must be >= 0");
}

CohortSpec CohortSpec::fenland() {
  CohortSpec s;
  s.name = "fenland";
  s.male_frac = 5229.0 / 11059.0;
  s.male = {{47.70, 7.57}, {1.78, 0.07}, {85.85, 13.83}, {61.48, 8.68}, {35.87, 22.35}, {3.27, 8.57}, {41.95, 4.61}};
  s.female = {{47.66, 7.36}, {1.64, 0.06}, {70.54, 13.92}, {64.46, 8.28}, {34.40, 22.59}, {3.31, 15.67}, {37.44, 4.73}};
  return s;
}

CohortSpec CohortSpec::bbvs() {
  CohortSpec s;
  s.name = "bbvs";
  s.male_frac = 98.0 / 181.0;
  s.male = {{53.59, 7.31}, {1.79, 0.07}, {84.63, 10.15}, {59.60, 8.06}, {40.97, 25.23}, {5.94, 12.61}, {35.69, 6.99}};
  s.female = {{54.39, 6.63}, {1.64, 0.06}, {69.31, 10.95}, {61.91, 6.93}, {41.73, 22.26}, {4.21, 8.76}, {29.60, 5.80}};
  // Different ECG recorder: noisier heart-rate channels.
  s.ts_noise_std = {2.0, 6.0, 12.0};
  // Maximal-test fitness here tracks body composition and vigorous activity
  // more than age and resting heart rate.
  s.label = {-1.2, -0.8, 0.5, 3.0, -3.5};
  return s;
}

double ground_truth_mean(const LabelModel& m, const LabelDrivers& d) {
  return m.age * (d.age - kRefAge) / kRefAgeStd + m.rhr * (d.rhr - kRefRhr) / kRefRhrStd +
         m.mvpa * (d.mvpa - kRefMvpa) / kRefMvpaStd + m.vpa * (d.vpa - kRefVpa) / kRefVpaStd +
         m.bmi * (d.bmi - kRefBmi) / kRefBmiStd;
}

Moments population_label_moments(const CohortSpec& spec) {
  const double pm = spec.male_frac, pf = 1.0 - pm;
  const Moments& m = spec.male.vo2max;
  const Moments& f = spec.female.vo2max;
  const double mean = pm * m.mean + pf * f.mean;
  const double second = pm * (m.std * m.std + m.mean * m.mean) + pf * (f.std * f.std + f.mean * f.mean);
  return {mean, std::sqrt(std::max(0.0, second - mean * mean))};
}

SampleSet generate_cohort(const CohortSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate_cohort: n must be >= 1");
  spec.validate();

  const std::size_t len = spec.series_length_raw;
  const double days = static_cast<double>(len) / 1440.0;

  SampleSet out;
  out.grade = LabelGrade::gold;
  out.processed = false;
  out.ts_channels.assign(kRawChannels.begin(), kRawChannels.end());
  out.meta_fields.assign(kRawMetaFields.begin(), kRawMetaFields.end());
  out.X = SeriesTensor(n, len, kRawChannels.size());
  out.M.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kRawMetaFields.size()));
  out.y.resize(static_cast<Eigen::Index>(n));
  out.domain.assign(n, Domain::source);

  const SexCalibration cal_male = calibrate_sex(spec, true);
  const SexCalibration cal_female = calibrate_sex(spec, false);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::vector<std::uint8_t> busy(len);
  std::vector<double> met(len);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const bool male = unit(rng) < spec.male_frac;
    const Person q = draw_person(rng, male ? spec.male : spec.female, male, len);
    const SexCalibration& cal = male ? cal_male : cal_female;
    const double label = std::clamp(cal.base + ground_truth_mean(spec.label, q.drivers(days)) + cal.noise_std * stdnorm(rng),
                                    kLabelMin, kLabelMax);
    const std::size_t n_vig = q.n_vig, n_mvpa = q.n_mvpa;
    const double rhr = q.rhr;

    // Activity-state layout: vigorous bouts first, then moderate.
    std::fill(busy.begin(), busy.end(), 0);
    place_bouts(rng, busy, n_vig, 2);
    place_bouts(rng, busy, n_mvpa - n_vig, 1);

    // Resting MET baseline: two slow sinusoids kept below 1 MET.
    const double phase1 = two_pi * unit(rng), phase2 = two_pi * unit(rng);
    const double period2 = 180.0 + 240.0 * unit(rng);
    for (std::size_t t = 0; t < len; ++t) {
      const double td = static_cast<double>(t);
      double m = 0.5 + 0.2 * std::sin(two_pi * td / 1440.0 + phase1) + 0.1 * std::sin(two_pi * td / period2 + phase2);
      m = std::clamp(m, 0.1, 0.85);
      if (busy[t] == 1) m = 1.2 + 2.8 * unit(rng);
      if (busy[t] == 2) m = 4.4 + 3.6 * unit(rng);
      met[t] = m;
    }

    // Heart-rate response per MET falls with fitness.
    const double gain = std::clamp(9.0 - 0.3 * (label - 40.0), 3.0, 20.0);
    const double hr_phase = two_pi * unit(rng);
    double response = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double td = static_cast<double>(t);
      response += 0.5 * (gain * std::max(met[t] - 1.0, 0.0) - response);
      const double accel = std::max(0.0, met[t] * kMetJoules + spec.ts_noise_std[0] * stdnorm(rng));
      const double hr_clean = rhr + 4.0 * std::sin(two_pi * td / 1440.0 + hr_phase) + response;
      const double hr = std::max(25.0, hr_clean + spec.ts_noise_std[1] * stdnorm(rng));
      const double hrv = std::max(1.0, 45.0 + 0.3 * (label - 40.0) - 0.8 * (hr_clean - rhr) +
                                           spec.ts_noise_std[2] * stdnorm(rng));
      out.X.at(i, t, 0) = accel;
      out.X.at(i, t, 1) = hr;
      out.X.at(i, t, 2) = hrv;
    }

    out.M(row, 0) = q.age;
    out.M(row, 1) = male ? 1.0 : 0.0;
    out.M(row, 2) = q.height;
    out.M(row, 3) = q.weight;
    out.M(row, 4) = q.weight / (q.height * q.height);
    out.M(row, 5) = rhr;
    out.M(row, 6) = q.month;
    out.y(row) = label;
  }
  return out;
}

LabelCorruption LabelCorruption::calibrated(double gold_mean, double gold_std, double slope, double bias, double r) {
  if (!(r > 0.0 && r < 1.0)) throw std::invalid_argument("LabelCorruption::calibrated: r must lie in (0,1)");
  if (gold_std <= 0.0 || slope <= 0.0) throw std::invalid_argument("LabelCorruption::calibrated: need positive slope and std");
  LabelCorruption c;
  c.slope = slope;
  // E[y_s - y_g] = (slope - 1) * mean + intercept
  c.intercept = bias - (slope - 1.0) * gold_mean;
  // r = slope*sd / sqrt(slope^2 sd^2 + noise^2)
  c.noise_std = slope * gold_std * std::sqrt(1.0 / (r * r) - 1.0);
  return c;
}

LabelCorruption LabelCorruption::defaults() {
  const Moments gold = population_label_moments(CohortSpec::fenland());
  return calibrated(gold.mean, gold.std, 0.85, -2.3, 0.68);
}

SampleSet corrupt_to_silver(const SampleSet& gold, const LabelCorruption& c, std::uint64_t seed) {
  if (gold.grade != LabelGrade::gold) throw InvalidState("corrupt_to_silver: labels are already silver");
  if (!std::isfinite(c.slope) || !std::isfinite(c.intercept) || !std::isfinite(c.noise_std) || c.noise_std < 0.0)
    throw std::invalid_argument("corrupt_to_silver: invalid corruption parameters");
  SampleSet out = gold;
  out.grade = LabelGrade::silver;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.y.size(); ++i) {
    const double eps = c.noise_std * noise(rng);
    out.y(i) = c.slope * gold.y(i) + c.intercept + eps;
  }
  return out;
}

SampleSet apply_label_shift(const SampleSet& set, const ShiftSpec& s, std::uint64_t seed) {
  if (!std::isfinite(s.noise_std) || s.noise_std < 0.0)
    throw std::invalid_argument("apply_label_shift: noise_std must be >= 0");
  if (!std::isfinite(s.offset)) throw std::invalid_argument("apply_label_shift: non-finite offset");
  SampleSet out = set;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.y.size(); ++i) out.y(i) = set.y(i) + s.offset + s.noise_std * noise(rng);
  return out;
}

CorruptionEnvelope measure_corruption(const SampleSet& gold, const SampleSet& silver) {
  if (gold.size() != silver.size()) throw std::invalid_argument("measure_corruption: size mismatch");
  CorruptionEnvelope env;
  env.mean_bias = (silver.y - gold.y).mean();
  env.pearson_r = pearson(gold.y, silver.y);
  return env;
}

}  // namespace udama
