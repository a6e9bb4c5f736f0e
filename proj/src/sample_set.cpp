#include "udama/sample_set.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace udama {

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }
const char* to_string(LabelGrade g) { return g == LabelGrade::gold ? "gold" : "silver"; }

std::vector<double> SeriesTensor::channel(std::size_t i, std::size_t c) const {
  std::vector<double> out(t_);
  for (std::size_t t = 0; t < t_; ++t) out[t] = at(i, t, c);
  return out;
}

void SampleSet::validate() const {
  const auto n = size();
  if (X.samples() != n || static_cast<std::size_t>(M.rows()) != n || domain.size() != n)
    throw std::invalid_argument("SampleSet: inconsistent sample counts");
  if (!ts_channels.empty() && ts_channels.size() != X.channels())
    throw std::invalid_argument("SampleSet: channel names do not match X");
  if (!meta_fields.empty() && meta_fields.size() != static_cast<std::size_t>(M.cols()))
    throw std::invalid_argument("SampleSet: field names do not match M");
  for (double v : X.raw())
    if (!std::isfinite(v)) throw std::invalid_argument("SampleSet: non-finite time-series value");
  if (!M.allFinite()) throw std::invalid_argument("SampleSet: non-finite metadata value");
  if (labeled && !y.allFinite()) throw std::invalid_argument("SampleSet: non-finite label");
}

SampleSet SampleSet::subset(std::span<const std::size_t> rows) const {
  SampleSet out;
  out.grade = grade;
  out.processed = processed;
  out.labeled = labeled;
  out.ts_channels = ts_channels;
  out.meta_fields = meta_fields;
  out.X = SeriesTensor(rows.size(), X.steps(), X.channels());
  out.M.resize(static_cast<Eigen::Index>(rows.size()), M.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  out.domain.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = rows[k];
    if (r >= size()) throw std::out_of_range("SampleSet::subset: row index out of range");
    auto src = X.sample(r);
    auto dst = out.X.sample(k);
    std::copy(src.begin(), src.end(), dst.begin());
    out.M.row(static_cast<Eigen::Index>(k)) = M.row(static_cast<Eigen::Index>(r));
    out.y(static_cast<Eigen::Index>(k)) = y(static_cast<Eigen::Index>(r));
    out.domain.push_back(domain[r]);
  }
  return out;
}

SampleSet SampleSet::concat(const SampleSet& a, const SampleSet& b, bool mixed_grade) {
  if (a.X.steps() != b.X.steps() || a.X.channels() != b.X.channels() || a.M.cols() != b.M.cols())
    throw std::invalid_argument("SampleSet::concat: shape mismatch");
  if (a.processed != b.processed) throw std::invalid_argument("SampleSet::concat: processing state mismatch");
  if (!mixed_grade && a.grade != b.grade) throw std::invalid_argument("SampleSet::concat: label grade mismatch");
  SampleSet out;
  out.grade = a.grade;
  out.processed = a.processed;
  out.labeled = a.labeled && b.labeled;
  out.ts_channels = a.ts_channels;
  out.meta_fields = a.meta_fields;
  const auto n = a.size() + b.size();
  out.X = SeriesTensor(n, a.X.steps(), a.X.channels());
  std::copy(a.X.raw().begin(), a.X.raw().end(), out.X.raw().begin());
  std::copy(b.X.raw().begin(), b.X.raw().end(), out.X.raw().begin() + static_cast<std::ptrdiff_t>(a.X.raw().size()));
  out.M.resize(static_cast<Eigen::Index>(n), a.M.cols());
  out.M << a.M, b.M;
  out.y.resize(static_cast<Eigen::Index>(n));
  out.y << a.y, b.y;
  out.domain = a.domain;
  out.domain.insert(out.domain.end(), b.domain.begin(), b.domain.end());
  return out;
}

bool SampleSet::operator==(const SampleSet& o) const {
  return X == o.X && M.rows() == o.M.rows() && M.cols() == o.M.cols() && M == o.M && y.size() == o.y.size() &&
         labeled == o.labeled && (!labeled || y == o.y) && domain == o.domain && grade == o.grade && processed == o.processed &&
         ts_channels == o.ts_channels && meta_fields == o.meta_fields;
}

SampleSet strip_labels(const SampleSet& set) {
  SampleSet out = set;
  out.labeled = false;
  out.y.setConstant(std::numeric_limits<double>::quiet_NaN());
  return out;
}

}  // namespace udama
