#pragma once

#include "udama/trainer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace udama {

enum class BaselineKind { in_domain_supervised, out_of_domain_supervised, transfer, autoencoder, deep_coral, wdgrl, dann };

const char* to_string(BaselineKind k);
/// Accepts the enum spelling (e.g. "deep_coral"); throws std::invalid_argument otherwise.
BaselineKind parse_baseline(const std::string& name);
std::vector<BaselineKind> all_baselines();

/// Fresh network, MSE only, early stopping on a validation split of `train`.
TrainResult train_supervised(const SampleSet& train, const TrainConfig& cfg, std::uint64_t seed);

/// Fresh network fitted on source labels. Early stopping monitors MSE on the
/// validation split of `target_train`; its remaining rows are only used as
/// unlabelled inputs by the alignment baselines below.
TrainResult train_out_of_domain(const SampleSet& source, const SampleSet& target_train, const TrainConfig& cfg,
                                std::uint64_t seed);

// ---- recurrent autoencoder ------------------------------------------------

/// Mirror of the recurrent stack: L bidirectional layers over the encoder's
/// output sequence followed by a per-step linear map back to the input width.
struct RecurrentDecoder {
  std::vector<BiGru> gru;
  Dense out;
};

RecurrentDecoder init_decoder(const NetConfig& cfg, std::uint64_t seed);
/// Encoder recurrent output -> reconstruction, (T*B) x F_ts.
Mat decode(const RecurrentDecoder& dec, const Mat& encoded, SequenceShape shape, std::vector<BiGruCache>* caches = nullptr,
           std::vector<Mat>* inputs = nullptr);

/// Encoder pretraining by sequence reconstruction on `source` inputs; the
/// decoder is discarded. The predictor bias starts at the mean source label
/// so the returned model can go straight into finetune().
TrainResult train_autoencoder_pretrain(const SampleSet& source, const TrainConfig& cfg, std::uint64_t seed);

// ---- Deep-CORAL ---------------------------------------------------------------

/// ||C_s - C_t||_F^2 / (4 d^2) with unbiased batch covariances.
double coral_loss(const Mat& emb_s, const Mat& emb_t);
/// Gradients of coral_loss with respect to both embedding batches.
std::pair<Mat, Mat> coral_grad(const Mat& emb_s, const Mat& emb_t);

TrainResult train_deep_coral(const SampleSet& source, const SampleSet& target_train, const TrainConfig& cfg,
                             double coral_weight, std::uint64_t seed);

// ---- WDGRL --------------------------------------------------------------------

struct WdgrlOptions {
  std::size_t critic_steps = 5;
  double penalty_weight = 10.0;
  double distance_weight = 1.0;
  std::size_t critic_hidden = 64;
};

struct Critic {
  Dense hidden, out;
};

Critic init_critic(std::size_t embedding_dim, std::size_t hidden, std::uint64_t seed);
Vec critic_forward(const Critic& c, const Mat& emb);
/// mean critic(a) - mean critic(b)
double wasserstein_estimate(const Critic& c, const Mat& a, const Mat& b);
/// Mean of (||grad_x critic(x)|| - 1)^2 over the rows of `points`.
double gradient_penalty(const Critic& c, const Mat& points);
/// Adds the gradient of `weight * gradient_penalty` with respect to the critic parameters.
void gradient_penalty_backward(const Critic& c, const Mat& points, double weight, Critic& grad);

TrainResult train_wdgrl(const SampleSet& source, const SampleSet& target_train, const TrainConfig& cfg,
                        const WdgrlOptions& opts, std::uint64_t seed);

// ---- DANN ---------------------------------------------------------------------

/// adapt_udama with the fine discriminator removed: weights (alpha, 1, 0).
TrainResult train_dann(const ModelParams& pretrained, const SampleSet& mixed, const DomainAssignment& assignment,
                       const TrainConfig& cfg, std::uint64_t seed, const SampleSet* probe_set = nullptr);

}  // namespace udama
