#include "udama/layers.hpp"

#include <cmath>

namespace udama {

void Dense::resize(Eigen::Index in, Eigen::Index out) {
  W = Mat::Zero(out, in);
  b = Vec::Zero(out);
}

Mat dense_forward(const Dense& d, const Mat& x) {
  Mat out(x.rows(), d.out());
  out.noalias() = x * d.W.transpose();
  out.rowwise() += d.b.transpose();
  return out;
}

Mat dense_backward(const Dense& d, const Mat& x, const Mat& d_out, Dense& grad) {
  grad.W.noalias() += d_out.transpose() * x;
  grad.b.noalias() += d_out.colwise().sum().transpose();
  Mat dx(x.rows(), x.cols());
  dx.noalias() = d_out * d.W;
  return dx;
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat relu_backward(const Mat& pre, const Mat& d_out) {
  return (pre.array() > 0.0).select(d_out, 0.0);
}

void GruCell::resize(Eigen::Index in, Eigen::Index hidden) {
  Wx = Mat::Zero(3 * hidden, in);
  Wh = Mat::Zero(3 * hidden, hidden);
  bx = Vec::Zero(3 * hidden);
  bh = Vec::Zero(3 * hidden);
}

namespace {

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Runs one direction; writes hidden states into columns [col, col+H) of `out`.
void gru_direction_forward(const GruCell& cell, const Mat& seq, SequenceShape shape, bool reverse, Mat& out,
                           Eigen::Index col, GruCache* cache) {
  const auto B = static_cast<Eigen::Index>(shape.batch);
  const auto T = static_cast<Eigen::Index>(shape.steps);
  const Eigen::Index H = cell.hidden();

  Mat gx(seq.rows(), 3 * H);
  gx.noalias() = seq * cell.Wx.transpose();
  gx.rowwise() += cell.bx.transpose();

  if (cache) {
    cache->r.resize(T * B, H);
    cache->z.resize(T * B, H);
    cache->n.resize(T * B, H);
    cache->gh_n.resize(T * B, H);
    cache->h_prev.resize(T * B, H);
  }

  Mat h = Mat::Zero(B, H);
  Mat gh(B, 3 * H);
  for (Eigen::Index k = 0; k < T; ++k) {
    const Eigen::Index t = reverse ? T - 1 - k : k;
    gh.noalias() = h * cell.Wh.transpose();
    gh.rowwise() += cell.bh.transpose();
    const auto gxt = gx.middleRows(t * B, B);
    Mat r = (gxt.leftCols(H) + gh.leftCols(H)).unaryExpr(&sigm);
    Mat z = (gxt.middleCols(H, H) + gh.middleCols(H, H)).unaryExpr(&sigm);
    Mat ghn = gh.rightCols(H);
    Mat n = (gxt.rightCols(H).array() + r.array() * ghn.array()).tanh().matrix();
    if (cache) {
      cache->r.middleRows(t * B, B) = r;
      cache->z.middleRows(t * B, B) = z;
      cache->n.middleRows(t * B, B) = n;
      cache->gh_n.middleRows(t * B, B) = ghn;
      cache->h_prev.middleRows(t * B, B) = h;
    }
    h = ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
    out.block(t * B, col, B, H) = h;
  }
}

void gru_direction_backward(const GruCell& cell, const GruCache& cache, const Mat& seq, const Mat& d_out,
                            Eigen::Index col, SequenceShape shape, bool reverse, GruCell& grad, Mat& d_seq) {
  const auto B = static_cast<Eigen::Index>(shape.batch);
  const auto T = static_cast<Eigen::Index>(shape.steps);
  const Eigen::Index H = cell.hidden();

  Mat d_gx(T * B, 3 * H);
  Mat dh_next = Mat::Zero(B, H);
  Mat d_gh(B, 3 * H);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    const Eigen::Index t = reverse ? T - 1 - k : k;
    const auto r = cache.r.middleRows(t * B, B).array();
    const auto z = cache.z.middleRows(t * B, B).array();
    const auto n = cache.n.middleRows(t * B, B).array();
    const auto ghn = cache.gh_n.middleRows(t * B, B).array();
    const auto hp = cache.h_prev.middleRows(t * B, B);

    const Eigen::ArrayXXd dh = d_out.block(t * B, col, B, H).array() + dh_next.array();
    const Eigen::ArrayXXd dn_pre = dh * (1.0 - z) * (1.0 - n * n);
    const Eigen::ArrayXXd dz_pre = dh * (hp.array() - n) * z * (1.0 - z);
    const Eigen::ArrayXXd dr_pre = dn_pre * ghn * r * (1.0 - r);

    d_gx.block(t * B, 0, B, H) = dr_pre.matrix();
    d_gx.block(t * B, H, B, H) = dz_pre.matrix();
    d_gx.block(t * B, 2 * H, B, H) = dn_pre.matrix();
    d_gh.leftCols(H) = dr_pre.matrix();
    d_gh.middleCols(H, H) = dz_pre.matrix();
    d_gh.rightCols(H) = (dn_pre * r).matrix();

    grad.Wh.noalias() += d_gh.transpose() * hp;
    grad.bh.noalias() += d_gh.colwise().sum().transpose();
    dh_next = (dh * z).matrix();
    dh_next.noalias() += d_gh * cell.Wh;
  }
  grad.Wx.noalias() += d_gx.transpose() * seq;
  grad.bx.noalias() += d_gx.colwise().sum().transpose();
  d_seq.noalias() += d_gx * cell.Wx;
}

}  // namespace

Mat bigru_forward(const BiGru& layer, const Mat& seq, SequenceShape shape, BiGruCache* cache) {
  const Eigen::Index H = layer.fwd.hidden();
  Mat out(seq.rows(), 2 * H);
  gru_direction_forward(layer.fwd, seq, shape, false, out, 0, cache ? &cache->fwd : nullptr);
  gru_direction_forward(layer.bwd, seq, shape, true, out, H, cache ? &cache->bwd : nullptr);
  if (cache) cache->input = &seq;
  return out;
}

Mat bigru_backward(const BiGru& layer, const BiGruCache& cache, const Mat& d_out, SequenceShape shape, BiGru& grad) {
  const Mat& seq = *cache.input;
  const Eigen::Index H = layer.fwd.hidden();
  Mat d_seq = Mat::Zero(seq.rows(), seq.cols());
  gru_direction_backward(layer.fwd, cache.fwd, seq, d_out, 0, shape, false, grad.fwd, d_seq);
  gru_direction_backward(layer.bwd, cache.bwd, seq, d_out, H, shape, true, grad.bwd, d_seq);
  return d_seq;
}

void BatchNorm::resize(Eigen::Index features) {
  gamma = Vec::Ones(features);
  beta = Vec::Zero(features);
  running_mean = Vec::Zero(features);
  running_var = Vec::Ones(features);
}

Mat batchnorm_forward(const BatchNorm& bn, const Mat& x, bool train, BatchNormCache* cache) {
  Vec mean, var;
  if (train) {
    mean = x.colwise().mean().transpose();
    var = (x.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
  } else {
    mean = bn.running_mean;
    var = bn.running_var;
  }
  const Vec inv_std = (var.array() + bn.eps).rsqrt().matrix();
  Mat xhat = (x.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array();
  Mat out = (xhat.array().rowwise() * bn.gamma.transpose().array()).rowwise() + bn.beta.transpose().array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
    cache->batch_mean = mean;
    cache->batch_var = var;
    cache->train = train;
  }
  return out;
}

Mat batchnorm_backward(const BatchNorm& bn, const BatchNormCache& cache, const Mat& d_out, BatchNorm& grad) {
  grad.gamma.noalias() += (d_out.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  grad.beta.noalias() += d_out.colwise().sum().transpose();
  const Eigen::ArrayXXd dxhat = d_out.array().rowwise() * bn.gamma.transpose().array();
  if (!cache.train) return (dxhat.rowwise() * cache.inv_std.transpose().array()).matrix();
  const double n = static_cast<double>(d_out.rows());
  const Eigen::RowVectorXd sum_d = dxhat.colwise().sum().matrix();
  const Eigen::RowVectorXd sum_dx = (dxhat * cache.xhat.array()).colwise().sum().matrix();
  Eigen::ArrayXXd dx = (n * dxhat).rowwise() - sum_d.array();
  dx -= cache.xhat.array().rowwise() * sum_dx.array();
  dx = dx.rowwise() * (cache.inv_std.transpose().array() / n);
  return dx.matrix();
}

void batchnorm_update_stats(BatchNorm& bn, const BatchNormCache& cache, Eigen::Index batch) {
  if (!cache.train) return;
  const double n = static_cast<double>(batch);
  const Vec unbiased = n > 1.0 ? Vec(cache.batch_var * (n / (n - 1.0))) : cache.batch_var;
  bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * cache.batch_mean;
  bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * unbiased;
}

void init_uniform(Dense& d, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d.in()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < d.W.size(); ++i) d.W.data()[i] = u(rng);
  d.b.setZero();
}

void init_uniform(GruCell& c, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c.hidden()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < c.Wx.size(); ++i) c.Wx.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < c.Wh.size(); ++i) c.Wh.data()[i] = u(rng);
  c.bx.setZero();
  c.bh.setZero();
}

}  // namespace udama
