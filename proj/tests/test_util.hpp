#pragma once

#include "udama/netgraph.hpp"
#include "udama/sample_set.hpp"

#include <cmath>
#include <random>

namespace udama::testing {

/// Small processed set with values in [0,1], for shape and gradient tests.
inline SampleSet random_processed_set(std::size_t n, std::size_t steps, std::size_t channels, std::size_t meta,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SampleSet s;
  s.processed = true;
  s.X = SeriesTensor(n, steps, channels);
  for (double& v : s.X.raw()) v = u(rng);
  s.M.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(meta));
  for (Eigen::Index i = 0; i < s.M.size(); ++i) s.M.data()[i] = u(rng);
  s.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < s.y.size(); ++i) s.y(i) = 30.0 + 15.0 * u(rng);
  s.domain.assign(n, Domain::target);
  return s;
}

inline NetConfig tiny_net(std::size_t ts = 3, std::size_t meta = 4) {
  NetConfig c;
  c.recurrent_units = 3;
  c.recurrent_layers = 2;
  c.meta_hidden = 5;
  c.disc_hidden = 4;
  c.dropout = 0.0;
  c.ts_features = ts;
  c.meta_features = meta;
  return c;
}

/// |a - b| / max(|a| + |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), floor);
}

}  // namespace udama::testing
