#include "udama/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace udama {

void Adam::step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam::step: parameter/gradient lists differ");
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  const double lr_t = opts_.learning_rate * std::sqrt(bc2) / bc1;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const TensorRef& p = params[k];
    const TensorRef& g = grads[k];
    if (p.size != g.size) throw std::invalid_argument("Adam::step: shape mismatch for " + p.name);
    auto& st = state_[p.name];
    if (st.m.size() != p.size) {
      st.m = Vec::Zero(p.size);
      st.v = Vec::Zero(p.size);
    }
    Eigen::Map<Vec> pv(p.data, p.size);
    Eigen::Map<const Vec> gv(g.data, g.size);
    st.m = opts_.beta1 * st.m + (1.0 - opts_.beta1) * gv;
    st.v = opts_.beta2 * st.v + (1.0 - opts_.beta2) * gv.cwiseAbs2();
    pv.array() -= lr_t * st.m.array() / (st.v.array().sqrt() + opts_.epsilon);
  }
}

std::pair<std::vector<TensorRef>, std::vector<TensorRef>> select_trainable(ModelParams& p, ModelParams& g,
                                                                            const LayerFilter& keep) {
  auto pt = p.tensors();
  auto gt = g.tensors();
  std::pair<std::vector<TensorRef>, std::vector<TensorRef>> out;
  for (std::size_t k = 0; k < pt.size(); ++k) {
    if (!keep(pt[k].layer) || !p.is_trainable(pt[k].layer)) continue;
    out.first.push_back(pt[k]);
    out.second.push_back(gt[k]);
  }
  return out;
}

bool is_encoder_layer(const std::string& layer) {
  return layer.rfind("gru", 0) == 0 || layer == "meta_bn" || layer == "meta_dense";
}

bool is_discriminator_layer(const std::string& layer) {
  return layer.rfind("coarse_", 0) == 0 || layer.rfind("fine_", 0) == 0;
}

void zero(ModelParams& grads) {
  for (auto& t : grads.tensors()) std::fill(t.data, t.data + t.size, 0.0);
}

}  // namespace udama
