#pragma once

#include "udama/layers.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace udama {

/// Independent random streams derived from one run seed.
struct RunRngs {
  std::uint64_t split_seed;
  std::mt19937_64 shuffle;
  std::mt19937_64 dropout;
  std::uint64_t init_seed;

  explicit RunRngs(std::uint64_t seed);
};

/// Shuffled mini-batches; a trailing batch of one joins its predecessor so
/// batch statistics are always defined.
std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> rows, std::size_t batch_size,
                                                   std::mt19937_64& rng);

Vec gather(const Vec& v, std::span<const std::size_t> rows);
Mat gather_rows(const Mat& m, std::span<const std::size_t> rows);

}  // namespace udama
