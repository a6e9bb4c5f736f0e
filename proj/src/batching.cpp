#include "udama/batching.hpp"

#include <algorithm>

namespace udama {

RunRngs::RunRngs(std::uint64_t seed) {
  std::mt19937_64 base(seed);
  split_seed = base();
  shuffle.seed(base());
  dropout.seed(base());
  init_seed = base();
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> rows, std::size_t batch_size,
                                                   std::mt19937_64& rng) {
  std::shuffle(rows.begin(), rows.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < rows.size(); i += batch_size)
    out.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(i),
                     rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), i + batch_size)));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

Vec gather(const Vec& v, std::span<const std::size_t> rows) {
  Vec out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(rows[k]));
  return out;
}

Mat gather_rows(const Mat& m, std::span<const std::size_t> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

}  // namespace udama
