#pragma once

#include <cstdint>
#include <vector>

#include "sqw/model.hpp"

namespace sqw {

// Per-element flags, 1 = frozen. mask[layer][param] may be empty (all free).
using FreezeMask = std::vector<std::vector<std::vector<uint8_t>>>;

FreezeMask empty_freeze_mask(const ModelGraph& model);

struct OptimizerState {
  double learning_rate = 1e-4;
  double lr_decay = 0.0;  // multiplicative per step: lr *= (1 - lr_decay)
  double momentum = 0.0;
  double weight_decay = 0.0;
  Grads velocity;
  int64_t step = 0;
};

OptimizerState make_optimizer(const ModelGraph& model, double lr, double momentum,
                              double weight_decay, double lr_decay);

// Free weights: v <- momentum*v + g + weight_decay*w; w <- w - lr*v.
// Frozen weights: w unchanged, v reset to 0. lr decays after the update.
void sgd_step(ModelGraph& model, const Grads& grads, OptimizerState& opt,
              const FreezeMask* freeze = nullptr);

}  // namespace sqw
