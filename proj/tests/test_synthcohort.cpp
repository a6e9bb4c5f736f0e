#include "doctest.h"

#include "udama/errors.hpp"
#include "udama/features.hpp"
#include "udama/objectives.hpp"
#include "udama/synthcohort.hpp"

#include <cmath>

using namespace udama;

namespace {
CohortSpec short_spec(CohortSpec s, std::size_t len = 360) {
  s.series_length_raw = len;
  return s;
}
}  // namespace

TEST_CASE("generate_cohort: Fenland men VO2max mean matches the cohort table") {
  CohortSpec men = short_spec(CohortSpec::fenland(), 90);
  men.male_frac = 1.0;
  const SampleSet s = generate_cohort(men, 2000, 7);
  const double tol = 3.0 * 4.61 / std::sqrt(2000.0);
  CHECK(std::abs(s.y.mean() - 41.95) <= tol);
  CHECK(s.grade == LabelGrade::gold);
  CHECK_FALSE(s.processed);
  CHECK(s.X.steps() == 90);
  CHECK(s.X.channels() == 3);
  CHECK(s.M.cols() == 7);
  CHECK((s.y.array() >= 15.0).all());
  CHECK((s.y.array() <= 70.0).all());
  CHECK((s.y.array() > 0.0).all());
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("generate_cohort: metadata marginals within sampling error") {
  CohortSpec men = short_spec(CohortSpec::fenland(), 1440);
  men.male_frac = 1.0;
  const std::size_t n = 2000;
  const SampleSet s = generate_cohort(men, n, 17);
  const double root_n = std::sqrt(static_cast<double>(n));
  auto check_col = [&](Eigen::Index col, const Moments& m) {
    const double mean = s.M.col(col).mean();
    CHECK(std::abs(mean - m.mean) <= 4.0 * m.std / root_n + 1e-9);
  };
  check_col(0, men.male.age);
  check_col(2, men.male.height);
  check_col(3, men.male.weight);
  check_col(5, men.male.rhr);
  CHECK((s.M.col(1).array() == 1.0).all());

  // Activity minutes are realised in the accelerometer trace (one-day series).
  double mvpa = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> mets(s.X.steps());
    for (std::size_t t = 0; t < s.X.steps(); ++t) mets[t] = accel_to_mets(s.X.at(i, t, 0));
    mvpa += static_cast<double>(classify_intensity(mets).mvpa);
  }
  mvpa /= static_cast<double>(n);
  CHECK(std::abs(mvpa - men.male.mvpa.mean) <= 4.0 * men.male.mvpa.std / root_n + 1.0);
}

TEST_CASE("generate_cohort: preconditions and determinism") {
  const CohortSpec spec = short_spec(CohortSpec::bbvs(), 60);
  CHECK_THROWS_AS(generate_cohort(spec, 0, 0), std::invalid_argument);
  CohortSpec bad = spec;
  bad.male.age.mean = std::nan("");
  CHECK_THROWS_AS(generate_cohort(bad, 5, 0), std::invalid_argument);
  bad = spec;
  bad.female.rhr.std = -1.0;
  CHECK_THROWS_AS(generate_cohort(bad, 5, 0), std::invalid_argument);
  bad = spec;
  bad.male_frac = 1.5;
  CHECK_THROWS_AS(generate_cohort(bad, 5, 0), std::invalid_argument);
  CHECK_THROWS_AS(spec.validate(7), std::invalid_argument);
  CHECK_NOTHROW(spec.validate(15));

  const SampleSet a = generate_cohort(spec, 50, 3);
  const SampleSet b = generate_cohort(spec, 50, 3);
  CHECK(a == b);
  CHECK(a.X.raw() == b.X.raw());
  const SampleSet c = generate_cohort(spec, 50, 4);
  CHECK_FALSE(a == c);
}

TEST_CASE("ground truth declines with age, RHR and BMI and rises with activity") {
  for (const LabelModel& m : {CohortSpec::fenland().label, CohortSpec::bbvs().label}) {
    const LabelDrivers d{50, 60, 30, 5, 25};
    const double base = ground_truth_mean(m, d);
    CHECK(ground_truth_mean(m, {60, 60, 30, 5, 25}) < base);
    CHECK(ground_truth_mean(m, {50, 70, 30, 5, 25}) < base);
    CHECK(ground_truth_mean(m, {50, 60, 60, 5, 25}) > base);
    CHECK(ground_truth_mean(m, {50, 60, 30, 15, 25}) > base);
    CHECK(ground_truth_mean(m, {50, 60, 30, 5, 30}) < base);
  }
  LabelModel wrong;
  wrong.vpa = -1.0;
  CHECK_THROWS_AS(wrong.validate(), std::invalid_argument);
  CohortSpec spec = CohortSpec::fenland();
  spec.label.age = 0.5;
  CHECK_THROWS_AS(generate_cohort(spec, 5, 0), std::invalid_argument);
}

TEST_CASE("generate_cohort: per-sex label moments follow the cohort table") {
  for (const CohortSpec& base : {CohortSpec::fenland(), CohortSpec::bbvs()}) {
    for (const bool male : {true, false}) {
      CohortSpec spec = short_spec(base, 90);
      spec.male_frac = male ? 1.0 : 0.0;
      const Moments& want = male ? spec.male.vo2max : spec.female.vo2max;
      const std::size_t n = 3000;
      const SampleSet s = generate_cohort(spec, n, 21);
      const double sd = std::sqrt((s.y.array() - s.y.mean()).square().mean());
      CHECK(std::abs(s.y.mean() - want.mean) <= 3.0 * want.std / std::sqrt(static_cast<double>(n)) + 0.1);
      CHECK(std::abs(sd - want.std) <= 0.06 * want.std);
    }
  }
}

TEST_CASE("population_label_moments mixes the per-sex moments") {
  CohortSpec spec;
  spec.male_frac = 0.5;
  spec.male.vo2max = {40.0, 3.0};
  spec.female.vo2max = {30.0, 4.0};
  const Moments m = population_label_moments(spec);
  CHECK(m.mean == doctest::Approx(35.0));
  // within-sex 0.5*(9+16) plus between-sex 25
  CHECK(m.std == doctest::Approx(std::sqrt(37.5)));
}

TEST_CASE("corrupt_to_silver") {
  const SampleSet gold = generate_cohort(short_spec(CohortSpec::fenland(), 30), 2000, 5);

  SUBCASE("identity corruption") {
    const SampleSet s = corrupt_to_silver(gold, {1.0, 0.0, 0.0}, 1);
    CHECK(s.y == gold.y);
    CHECK(s.grade == LabelGrade::silver);
    CHECK(s.X == gold.X);
    CHECK(s.M == gold.M);
  }
  SUBCASE("constant offset for slope 1 and zero noise") {
    const SampleSet s = corrupt_to_silver(gold, {1.0, -2.5, 0.0}, 1);
    CHECK(((s.y - gold.y).array() == -2.5).all());
  }
  SUBCASE("default corruption sits in the published envelope") {
    const SampleSet s = corrupt_to_silver(gold, LabelCorruption::defaults(), 1);
    const auto env = measure_corruption(gold, s);
    CHECK(env.mean_bias >= -3.0);
    CHECK(env.mean_bias <= -1.6);
    CHECK(env.pearson_r >= 0.57);
    CHECK(env.pearson_r <= 0.79);
    CHECK(s.X == gold.X);
    CHECK(s.M == gold.M);
    CHECK(s.size() == gold.size());
  }
  SUBCASE("analytic r formula agrees with the measured correlation") {
    // r = slope*sd / sqrt(slope^2 sd^2 + noise^2)  =>  noise = slope*sd*sqrt(1/r^2 - 1)
    const double sd = std::sqrt((gold.y.array() - gold.y.mean()).square().mean());
    const double noise = 0.8 * sd * std::sqrt(1.0 / (0.7 * 0.7) - 1.0);
    const SampleSet s = corrupt_to_silver(gold, {0.8, 0.0, noise}, 9);
    CHECK(std::abs(pearson(gold.y, s.y) - 0.7) <= 0.05);
  }
  SUBCASE("silver input is rejected; output deterministic") {
    const SampleSet s = corrupt_to_silver(gold, LabelCorruption::defaults(), 2);
    CHECK_THROWS_AS(corrupt_to_silver(s, LabelCorruption::defaults(), 2), InvalidState);
    CHECK(corrupt_to_silver(gold, LabelCorruption::defaults(), 2) == s);
  }
}

TEST_CASE("calibrated corruption hits the requested moments analytically") {
  const auto c = LabelCorruption::calibrated(40.0, 5.0, 0.85, -2.3, 0.68);
  CHECK((c.slope - 1.0) * 40.0 + c.intercept == doctest::Approx(-2.3));
  const double r = c.slope * 5.0 / std::sqrt(c.slope * c.slope * 25.0 + c.noise_std * c.noise_std);
  CHECK(r == doctest::Approx(0.68));
}

TEST_CASE("apply_label_shift") {
  const SampleSet set = generate_cohort(short_spec(CohortSpec::fenland(), 30), 2000, 8);
  CHECK(apply_label_shift(set, {0.0, 0.0}, 1).y == set.y);
  const SampleSet left = apply_label_shift(set, {-5.0, 0.0}, 1);
  CHECK(left.y.mean() == doctest::Approx(set.y.mean() - 5.0).epsilon(1e-12));
  CHECK(left.X == set.X);
  CHECK(left.M == set.M);
  CHECK_THROWS_AS(apply_label_shift(set, {0.0, -1.0}, 1), std::invalid_argument);
  CHECK(apply_label_shift(set, {1.0, 1.0}, 4) == apply_label_shift(set, {1.0, 1.0}, 4));

  // Histogram-KL against the unshifted labels grows with |offset|.
  double previous = -1.0;
  for (double offset : {0.0, -5.0, 8.0}) {
    const SampleSet shifted = apply_label_shift(set, {offset, 1.0}, 3);
    const double kl = distribution_gap(set.y, shifted.y).kl;
    CHECK(kl >= previous);
    previous = kl;
  }
}
