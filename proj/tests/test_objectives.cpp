#include "doctest.h"

#include "test_util.hpp"
#include "udama/errors.hpp"
#include "udama/objectives.hpp"

#include <cmath>
#include <random>

using namespace udama;
using udama::testing::rel_err;

namespace {
Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}
}  // namespace

TEST_CASE("mse and mae") {
  const Vec y = vec({1.5, -2.0, 3.0});
  CHECK(mse_loss(y, y) == 0.0);
  CHECK(mae(y, y) == 0.0);
  CHECK(mse_loss(vec({0, 0}), vec({1, 1})) == 1.0);
  CHECK(mae(vec({0, 0}), vec({1, 1})) == 1.0);
  CHECK(mse_loss(vec({0, 2}), vec({0, 0})) == 2.0);
  CHECK(mae(vec({0, 2}), vec({0, 0})) == 1.0);
  CHECK_THROWS_AS(mse_loss(vec({1}), vec({1, 2})), std::invalid_argument);
  CHECK_THROWS_AS(mae(Vec(), Vec()), std::invalid_argument);
}

TEST_CASE("cross entropy closed forms and clamping") {
  CHECK(cross_entropy(vec({1}), vec({1.0})) < 1e-6);
  CHECK(cross_entropy(vec({1}), vec({0.5})) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(cross_entropy(vec({0}), vec({0.5})) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::isfinite(cross_entropy(vec({1}), vec({0.0}))));
  CHECK(cross_entropy(vec({1}), vec({0.0})) == doctest::Approx(-std::log(kProbClamp)));
  CHECK_THROWS_AS(cross_entropy(vec({1, 0}), vec({0.5})), std::invalid_argument);
}

TEST_CASE("gaussian nll closed forms and floor") {
  CHECK(gaussian_nll(0.0, 0.0, 1.0) == 0.0);
  CHECK(gaussian_nll(1.0, 0.0, 1.0) == 0.5);
  CHECK(gaussian_nll(2.0, 0.0, 4.0) == doctest::Approx(0.5 * (std::log(4.0) + 1.0)).epsilon(1e-12));
  CHECK(gaussian_nll(2.0, 0.0, 4.0) == doctest::Approx(1.1931).epsilon(1e-4));
  CHECK_THROWS_AS(gaussian_nll(0.0, 0.0, 1e-8), std::invalid_argument);
  CHECK(gaussian_nll(vec({0, 1}), vec({0, 0}), vec({1, 1})) == 0.25);
}

TEST_CASE("gaussian nll gradient matches central differences at 100 random points") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> t_d(-50, 50), mu_d(-50, 50), lv_d(-4, 6);
  const double floor = 1e-6, h = 1e-6;
  for (int k = 0; k < 100; ++k) {
    const double t = t_d(rng), mu = mu_d(rng), lv = lv_d(rng);
    auto f = [&](double m, double l) { return gaussian_nll(t, m, std::exp(l) + floor, floor); };
    const auto g = gaussian_nll_grad(t, mu, lv, floor);
    const double n_mu = (f(mu + h, lv) - f(mu - h, lv)) / (2 * h);
    const double n_lv = (f(mu, lv + h) - f(mu, lv - h)) / (2 * h);
    CHECK(rel_err(g.d_mu, n_mu) < 1e-4);
    CHECK(rel_err(g.d_log_var, n_lv) < 1e-4);
  }
}

TEST_CASE("cross entropy logit gradient matches central differences") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> z_d(-6, 6);
  std::bernoulli_distribution y_d(0.5);
  const double h = 1e-6;
  for (int k = 0; k < 100; ++k) {
    Vec y(3), z(3);
    for (int i = 0; i < 3; ++i) {
      y(i) = y_d(rng) ? 1.0 : 0.0;
      z(i) = z_d(rng);
    }
    const Vec g = cross_entropy_logit_grad(y, z);
    for (int i = 0; i < 3; ++i) {
      Vec zp = z, zm = z;
      zp(i) += h;
      zm(i) -= h;
      const double num = (cross_entropy(y, zp.unaryExpr(&udama::sigmoid)) - cross_entropy(y, zm.unaryExpr(&udama::sigmoid))) / (2 * h);
      CHECK(rel_err(g(i), num) < 1e-4);
    }
  }
}

TEST_CASE("total adapt loss follows the weighted difference and validates lambdas") {
  CHECK(total_adapt_loss({0.01, 0.9, 0.1}, 100, 1, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(total_adapt_loss({0.01, 0.5, 0.5}, 0, 0, 0) == 0.0);
  CHECK_THROWS_AS(total_adapt_loss({0.01, 0.9, 0.2}, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(total_adapt_loss({0.0, 0.9, 0.1}, 1, 1, 1), std::invalid_argument);

  // linear in each loss argument
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 10);
  for (int k = 0; k < 50; ++k) {
    const double l1 = u(rng) / 10.0;
    const LossWeights w{0.01 + u(rng) / 100.0, l1, 1.0 - l1};
    const double a = u(rng), b = u(rng), c = u(rng), s = u(rng);
    const double base = total_adapt_loss(w, 0, 0, 0);
    CHECK(total_adapt_loss(w, a + s, b, c) - total_adapt_loss(w, a, b, c) ==
          doctest::Approx(total_adapt_loss(w, s, 0, 0) - base).epsilon(1e-9));
    CHECK(total_adapt_loss(w, s * a, s * b, s * c) == doctest::Approx(s * total_adapt_loss(w, a, b, c)).epsilon(1e-9));
  }
}

TEST_CASE("r squared and pearson") {
  const Vec y = vec({1, 2, 4, 7});
  CHECK(r_squared(y, y) == 1.0);
  CHECK(pearson(y, y) == doctest::Approx(1.0));
  CHECK(r_squared(y, Vec::Constant(4, y.mean())) == doctest::Approx(0.0));
  CHECK(r_squared(vec({0, 1}), vec({1, 0})) == doctest::Approx(-3.0));
  CHECK(pearson(vec({0, 1}), vec({1, 0})) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(pearson(y, Vec::Constant(4, 2.0)), DegenerateInput);
  CHECK_THROWS_AS(r_squared(Vec::Constant(3, 1.0), y.head(3)), DegenerateInput);
  CHECK_THROWS_AS(pearson(vec({1}), vec({1})), std::invalid_argument);
}

TEST_CASE("histogram construction") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  Vec v(1000);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = u(rng);
  const auto h = build_histogram(v, 10, 0.0, 1.0);
  CHECK(h.edges.size() == 11);
  double total = 0;
  for (double m : h.mass) {
    CHECK(std::abs(m - 0.1) <= 0.05);
    total += m;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

  const auto point = build_histogram(Vec::Constant(5, 0.37), 10, 0.0, 1.0);
  CHECK(point.mass[3] == 1.0);

  const auto clipped = build_histogram(vec({-5, 0.5, 9}), 4, 0.0, 1.0);
  CHECK(clipped.mass[0] == doctest::Approx(1.0 / 3));
  CHECK(clipped.mass[2] == doctest::Approx(1.0 / 3));
  CHECK(clipped.mass[3] == doctest::Approx(1.0 / 3));
  CHECK_THROWS_AS(build_histogram(Vec(), 4, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_histogram(vec({1}), 4, 1, 1), std::invalid_argument);
}

TEST_CASE("hellinger and kl basic properties") {
  const auto a = build_histogram(vec({0.1, 0.2, 0.3}), 4, 0, 1);
  const auto b = build_histogram(vec({0.9, 0.95, 0.8}), 4, 0, 1);
  CHECK(hellinger(a, a) == 0.0);
  CHECK(hellinger(a, b) == doctest::Approx(1.0));
  CHECK(hellinger(a, b) == hellinger(b, a));
  CHECK(kl_divergence(a, a) == 0.0);
  CHECK(kl_divergence(a, b) > 0.0);
  const auto c = build_histogram(vec({0.1}), 5, 0, 1);
  CHECK_THROWS_AS(hellinger(a, c), std::invalid_argument);
  CHECK_THROWS_AS(kl_divergence(a, c), std::invalid_argument);

  // Gibbs' inequality over random histogram pairs
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  for (int k = 0; k < 50; ++k) {
    Vec x(30), y(30);
    for (int i = 0; i < 30; ++i) {
      x(i) = n(rng);
      y(i) = n(rng) + 0.5;
    }
    const auto [lo, hi] = union_range(x, y);
    const auto hx = build_histogram(x, 8, lo, hi), hy = build_histogram(y, 8, lo, hi);
    CHECK(kl_divergence(hx, hy) >= 0.0);
    const double hd = hellinger(hx, hy);
    CHECK(hd >= 0.0);
    CHECK(hd <= 1.0);
  }
}
