#pragma once

#include <cstdint>
#include <vector>

#include "sqw/model.hpp"
#include "sqw/optimizer.hpp"
#include "sqw/rng.hpp"
#include "sqw/tensor.hpp"

namespace sqw {

// Supervised dataset. Labels are flat per-site class indices stored
// sample-major: sites_per_sample entries per sample (1 for whole-image
// classification, frame count for sequences, pixel count for masks).
struct Dataset {
  Tensor inputs;
  std::vector<int32_t> labels;
  int64_t sites_per_sample = 1;
  int num_classes = 0;

  int64_t size() const { return inputs.rank() > 0 ? inputs.dim(0) : 0; }
};

// Gathers the given samples into a batch tensor plus site-ordered targets.
void make_batch(const Dataset& ds, const std::vector<int64_t>& idx, Tensor& x,
                std::vector<int32_t>& targets);

struct TrainConfig {
  int epochs = 1;
  int batch_size = 32;
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lr_decay = 1e-6;
  int64_t lr_drop_step = -1;  // >= 0: learning rate set to lr_drop_to at that step
  double lr_drop_to = 0.0;
  bool shuffle = true;
};

// Minibatch SGD over the dataset. The optimizer state carries across calls
// (retraining intervals continue the same velocity and lr schedule); data_rng
// drives the shuffle. Returns the mean training loss of the last epoch.
double train_model(ModelGraph& model, const Dataset& ds, const TrainConfig& cfg,
                   OptimizerState& opt, Rng& data_rng, const FreezeMask* freeze = nullptr,
                   std::vector<double>* epoch_losses = nullptr);

// Per-site argmax class predictions for a probability tensor.
std::vector<int32_t> site_predictions(const Tensor& probs);

// Fraction of sites predicted correctly, in [0,1].
double accuracy_on(const ModelGraph& model, const Dataset& ds, int batch_size = 64);

}  // namespace sqw
