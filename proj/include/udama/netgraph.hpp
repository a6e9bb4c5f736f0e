#pragma once

#include "udama/layers.hpp"
#include "udama/sample_set.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace udama {

struct NetConfig {
  std::size_t recurrent_units = 32;
  std::size_t recurrent_layers = 2;  // each bidirectional
  std::size_t meta_hidden = 128;
  double dropout = 0.3;
  std::size_t disc_hidden = 64;
  double variance_floor = 1e-6;
  std::size_t ts_features = 4;
  std::size_t meta_features = 11;

  void validate() const;
  std::size_t embedding_dim() const { return 2 * recurrent_units + meta_hidden; }
  bool operator==(const NetConfig&) const = default;
};

/// Non-owning view of one parameter (or buffer) tensor.
struct TensorRef {
  std::string name;
  std::string layer;
  double* data = nullptr;
  Eigen::Index size = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

/// Encoder E (recurrent stack + metadata branch), predictor G_y, coarse
/// discriminator D_c and fine discriminator D_f, with per-layer trainable flags.
///
/// Layer names: gru0..gru{L-1}, meta_bn, meta_dense, predictor,
/// coarse_hidden, coarse_out, fine_hidden, fine_out.
struct ModelParams {
  NetConfig cfg;
  std::vector<BiGru> gru;
  BatchNorm meta_bn;
  Dense meta_dense;
  Dense predictor;
  Dense coarse_hidden, coarse_out;
  Dense fine_hidden, fine_out;
  std::map<std::string, bool> trainable;
  bool freeze_applied = false;

  /// Shape-only construction with zero weights; every layer trainable.
  static ModelParams zeros(const NetConfig& cfg);
  /// Same shapes as `this`, all zero; used as a gradient accumulator.
  ModelParams zeros_like() const;

  std::vector<std::string> layer_names() const;
  /// Trainable parameters in a fixed order.
  std::vector<TensorRef> tensors();
  /// Running statistics (not optimised).
  std::vector<TensorRef> buffers();

  bool is_trainable(const std::string& layer) const;
  bool all_finite();

  bool operator==(const ModelParams& o) const;
};

ModelParams init_params(const NetConfig& cfg, std::uint64_t seed);
/// Freezes gru0 and meta_dense. Idempotent.
ModelParams freeze_plan(const ModelParams& params);

/// A mini-batch in network layout.
struct Batch {
  Mat seq;   // (T*B) x F_ts, time-major
  Mat meta;  // B x F_meta
  SequenceShape shape;
};

Batch make_batch(const SampleSet& set, std::span<const std::size_t> rows);
Batch make_batch(const SampleSet& set);

struct EncoderCache {
  std::vector<Mat> layer_inputs;  // input to each recurrent layer (layer 0 = batch seq)
  std::vector<BiGruCache> gru;
  Mat last_output;
  BatchNormCache bn;
  Mat meta_pre;  // dense pre-activation
  Mat meta_norm;
  Mat dropout_mask;  // B x d_emb, empty in eval mode
  SequenceShape shape;
};

/// Encoder forward. `rng` supplies the dropout mask in train mode (required then).
/// Batch-norm running statistics are not touched; see update_running_stats().
Mat encode(const ModelParams& params, const Batch& batch, bool train_mode, std::mt19937_64* rng = nullptr,
           EncoderCache* cache = nullptr);
/// Accumulates encoder gradients into `grad` given d embedding.
void encode_backward(const ModelParams& params, const EncoderCache& cache, const Mat& d_emb, ModelParams& grad);
/// Backward through the recurrent stack only, from d of the last layer's
/// output sequence ((T*B) x 2H). Frozen bottom layers are skipped.
void recurrent_backward(const ModelParams& params, const EncoderCache& cache, const Mat& d_last_output,
                        ModelParams& grad);
void update_running_stats(ModelParams& params, const EncoderCache& cache);

/// Linear head, one scalar per row.
Vec predict(const ModelParams& params, const Mat& emb);
Mat predict_backward(const ModelParams& params, const Mat& emb, const Vec& d_out, ModelParams& grad);

struct CoarseOutput {
  Mat hidden_pre;
  Vec logit;
  Vec prob;  // P(domain = target)
};
CoarseOutput disc_coarse_forward(const ModelParams& params, const Mat& emb);
Vec disc_coarse(const ModelParams& params, const Mat& emb);
Mat disc_coarse_backward(const ModelParams& params, const Mat& emb, const CoarseOutput& out, const Vec& d_logit,
                         ModelParams& grad);

struct FineOutput {
  Mat hidden_pre;
  Vec mu;
  Vec log_var;
  Vec var;  // exp(log_var) + variance_floor
};
FineOutput disc_fine_forward(const ModelParams& params, const Mat& emb);
std::pair<Vec, Vec> disc_fine(const ModelParams& params, const Mat& emb);
Mat disc_fine_backward(const ModelParams& params, const Mat& emb, const FineOutput& out, const Vec& d_mu,
                       const Vec& d_log_var, ModelParams& grad);

/// Eval-mode predictions for a whole set, in chunks.
Vec predict_set(const ModelParams& params, const SampleSet& set, std::size_t chunk = 256);
/// Eval-mode embeddings for a whole set.
Mat embed_set(const ModelParams& params, const SampleSet& set, std::size_t chunk = 256);

}  // namespace udama
