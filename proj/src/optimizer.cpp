#include "sqw/optimizer.hpp"

#include <stdexcept>

namespace sqw {

FreezeMask empty_freeze_mask(const ModelGraph& model) {
  FreezeMask m(model.layers.size());
  for (size_t i = 0; i < model.layers.size(); ++i)
    m[i].assign(model.layers[i].params.size(), {});
  return m;
}

OptimizerState make_optimizer(const ModelGraph& model, double lr, double momentum,
                              double weight_decay, double lr_decay) {
  if (lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
  OptimizerState st;
  st.learning_rate = lr;
  st.momentum = momentum;
  st.weight_decay = weight_decay;
  st.lr_decay = lr_decay;
  st.velocity = zero_grads(model);
  return st;
}

void sgd_step(ModelGraph& model, const Grads& grads, OptimizerState& opt,
              const FreezeMask* freeze) {
  if (grads.size() != model.layers.size() || opt.velocity.size() != model.layers.size())
    throw std::invalid_argument("sgd_step: gradient/velocity structure mismatch");
  const float lr = static_cast<float>(opt.learning_rate);
  const float mu = static_cast<float>(opt.momentum);
  const float wd = static_cast<float>(opt.weight_decay);
  for (size_t l = 0; l < model.layers.size(); ++l) {
    auto& params = model.layers[l].params;
    if (grads[l].size() != params.size())
      throw std::invalid_argument("sgd_step: gradient/param count mismatch");
    for (size_t p = 0; p < params.size(); ++p) {
      auto& w = params[p].value.data;
      auto& v = opt.velocity[l][p].data;
      const auto& g = grads[l][p].data;
      if (w.size() != g.size() || w.size() != v.size())
        throw std::invalid_argument("sgd_step: shape mismatch");
      const std::vector<uint8_t>* fm = nullptr;
      if (freeze && l < freeze->size() && p < (*freeze)[l].size() && !(*freeze)[l][p].empty()) {
        if ((*freeze)[l][p].size() != w.size())
          throw std::invalid_argument("sgd_step: freeze mask shape mismatch");
        fm = &(*freeze)[l][p];
      }
      for (size_t k = 0; k < w.size(); ++k) {
        if (fm && (*fm)[k]) {
          v[k] = 0.0f;
          continue;
        }
        v[k] = mu * v[k] + g[k] + wd * w[k];
        w[k] -= lr * v[k];
      }
    }
  }
  opt.learning_rate *= (1.0 - opt.lr_decay);
  opt.step += 1;
}

}  // namespace sqw
