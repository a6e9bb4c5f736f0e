#pragma once

#include "udama/sample_set.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace udama {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

/// Per-sex population parameters of a cohort.
struct SexParams {
  Moments age;     // years
  Moments height;  // m
  Moments weight;  // kg
  Moments rhr;     // bpm
  Moments mvpa;    // min/day
  Moments vpa;     // min/day
  Moments vo2max;  // ml O2/min/kg; the label generator reproduces these moments
};

/// Label drivers of one participant, in natural units.
struct LabelDrivers {
  double age = 0.0;   // years
  double rhr = 0.0;   // bpm
  double mvpa = 0.0;  // min/day realised in the series
  double vpa = 0.0;   // min/day realised in the series
  double bmi = 0.0;   // kg/m^2
};

/// Effect on VO2max (ml O2/min/kg) of a one-reference-SD increase in each
/// driver. Signs are fixed: fitness declines with age, RHR and BMI and rises
/// with activity. Cohorts differ in weights, which is the concept shift
/// between source and target.
struct LabelModel {
  double age = -2.5;
  double rhr = -2.5;
  double mvpa = 0.8;
  double vpa = 0.5;
  double bmi = -0.5;

  void validate() const;
};

/// Raw channel order produced by the generator.
inline constexpr std::array<const char*, 3> kRawChannels = {"accel", "HR", "HRV"};
/// Raw metadata order produced by the generator.
inline constexpr std::array<const char*, 7> kRawMetaFields = {"age", "sex", "height", "weight", "BMI", "RHR", "month"};

struct CohortSpec {
  std::string name = "cohort";
  double male_frac = 0.5;
  SexParams male;
  SexParams female;
  std::size_t series_length_raw = 9000;  // minutes
  // Additive white-noise scale per raw channel: accel (J/min/kg), HR (bpm), HRV (ms).
  std::array<double, 3> ts_noise_std = {2.0, 3.0, 6.0};
  LabelModel label;

  /// Throws std::invalid_argument naming the offending field.
  void validate(std::size_t downsample_ratio = 1) const;

  /// Silver-standard source population (large free-living cohort).
  static CohortSpec fenland();
  /// Gold-standard target population (validation subset, different ECG device).
  static CohortSpec bbvs();
};

/// y_silver = slope * y_gold + intercept + N(0, noise_std^2).
struct LabelCorruption {
  double slope = 1.0;
  double intercept = 0.0;
  double noise_std = 0.0;

  /// Solves intercept and noise_std so that a gold population with the given
  /// moments gets mean bias `bias` and Pearson r `r` under `slope`.
  static LabelCorruption calibrated(double gold_mean, double gold_std, double slope, double bias, double r);
  /// slope 0.85, mean bias -2.3, r 0.68 against the default source population.
  static LabelCorruption defaults();
};

/// y' = y + offset + N(0, noise_std^2).
struct ShiftSpec {
  double offset = 0.0;
  double noise_std = 0.0;
};

/// Mean and std of the cohort's label mixture over sexes.
Moments population_label_moments(const CohortSpec& spec);

/// Driver part of the ground-truth function: sum of weight * (x - ref) / ref_sd
/// over the drivers, with fixed reference moments. The generator adds a
/// per-sex base and Gaussian noise chosen so each sex reproduces its VO2max
/// moments, then clips to [15, 70].
double ground_truth_mean(const LabelModel& model, const LabelDrivers& d);

SampleSet generate_cohort(const CohortSpec& spec, std::size_t n, std::uint64_t seed);
SampleSet corrupt_to_silver(const SampleSet& gold, const LabelCorruption& c, std::uint64_t seed);
SampleSet apply_label_shift(const SampleSet& set, const ShiftSpec& s, std::uint64_t seed);

struct CorruptionEnvelope {
  double mean_bias = 0.0;
  double pearson_r = 0.0;
};
/// Measured bias and correlation between paired silver and gold labels.
CorruptionEnvelope measure_corruption(const SampleSet& gold, const SampleSet& silver);

}  // namespace udama
