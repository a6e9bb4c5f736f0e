#pragma once

#include "udama/netgraph.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace udama {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Adam over named tensors; moment buffers are keyed by tensor name, so one
/// instance can drive any subset of a model as long as names stay stable.
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  /// params[k] is updated with grads[k]; the two lists must align.
  void step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads);

  long steps() const { return t_; }

 private:
  struct Moments {
    Vec m, v;
  };
  AdamOptions opts_;
  std::map<std::string, Moments> state_;
  long t_ = 0;
};

using LayerFilter = std::function<bool(const std::string& layer)>;

/// Tensors of `p` whose layer passes `keep` and is trainable, with the
/// matching gradient tensors of `g`.
std::pair<std::vector<TensorRef>, std::vector<TensorRef>> select_trainable(ModelParams& p, ModelParams& g,
                                                                            const LayerFilter& keep);

bool is_encoder_layer(const std::string& layer);
bool is_discriminator_layer(const std::string& layer);

void zero(ModelParams& grads);

}  // namespace udama
