#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <random>

namespace udama {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Sequences are stored time-major: row t*B + b holds step t of sample b.
struct SequenceShape {
  std::size_t batch = 0;
  std::size_t steps = 0;
};

// ---- dense -------------------------------------------------------------

struct Dense {
  Mat W;  // out x in
  Vec b;  // out

  Eigen::Index in() const { return W.cols(); }
  Eigen::Index out() const { return W.rows(); }
  void resize(Eigen::Index in, Eigen::Index out);
};

/// x (B x in) -> x W^T + b.
Mat dense_forward(const Dense& d, const Mat& x);
/// Accumulates into `grad`; returns d x.
Mat dense_backward(const Dense& d, const Mat& x, const Mat& d_out, Dense& grad);

Mat relu(const Mat& x);
/// d_out masked where pre <= 0.
Mat relu_backward(const Mat& pre, const Mat& d_out);

// ---- GRU ---------------------------------------------------------------

/// One GRU direction. Gate blocks are ordered [reset, update, candidate]:
///   r = s(Wx_r x + bx_r + Wh_r h + bh_r)
///   z = s(Wx_z x + bx_z + Wh_z h + bh_z)
///   n = tanh(Wx_n x + bx_n + r * (Wh_n h + bh_n))
///   h' = (1 - z) * n + z * h
struct GruCell {
  Mat Wx;  // 3H x in
  Mat Wh;  // 3H x H
  Vec bx;  // 3H
  Vec bh;  // 3H

  Eigen::Index hidden() const { return Wh.cols(); }
  void resize(Eigen::Index in, Eigen::Index hidden);
};

struct GruCache {
  Mat r, z, n, gh_n, h_prev;  // (T*B) x H, indexed by original time step
};

struct BiGru {
  GruCell fwd;
  GruCell bwd;
};

struct BiGruCache {
  GruCache fwd, bwd;
  const Mat* input = nullptr;  // not owned; must outlive the backward call
};

/// seq (T*B x in) -> (T*B x 2H), forward and backward states concatenated per step.
Mat bigru_forward(const BiGru& layer, const Mat& seq, SequenceShape shape, BiGruCache* cache);
/// Accumulates parameter gradients; returns d seq.
Mat bigru_backward(const BiGru& layer, const BiGruCache& cache, const Mat& d_out, SequenceShape shape, BiGru& grad);

// ---- batch normalisation ----------------------------------------------

struct BatchNorm {
  Vec gamma, beta;
  Vec running_mean, running_var;
  double eps = 1e-3;
  double momentum = 0.1;

  void resize(Eigen::Index features);
};

struct BatchNormCache {
  Mat xhat;
  Vec inv_std;
  Vec batch_mean, batch_var;
  bool train = false;
};

Mat batchnorm_forward(const BatchNorm& bn, const Mat& x, bool train, BatchNormCache* cache);
Mat batchnorm_backward(const BatchNorm& bn, const BatchNormCache& cache, const Mat& d_out, BatchNorm& grad);
/// Folds the batch statistics of a training forward pass into the running estimates.
void batchnorm_update_stats(BatchNorm& bn, const BatchNormCache& cache, Eigen::Index batch);

// ---- initialisation ----------------------------------------------------

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
void init_uniform(Dense& d, std::mt19937_64& rng);
/// U(-1/sqrt(H), 1/sqrt(H)) for both weight matrices, zero biases.
void init_uniform(GruCell& c, std::mt19937_64& rng);

}  // namespace udama
