#include "sqw/train.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace sqw {

void make_batch(const Dataset& ds, const std::vector<int64_t>& idx, Tensor& x,
                std::vector<int32_t>& targets) {
  if (ds.size() == 0) throw std::invalid_argument("make_batch: empty dataset");
  const int64_t per = ds.inputs.numel() / ds.size();
  std::vector<int> shape = ds.inputs.shape;
  shape[0] = static_cast<int>(idx.size());
  x = Tensor(shape);
  targets.resize(idx.size() * ds.sites_per_sample);
  for (size_t r = 0; r < idx.size(); ++r) {
    const int64_t n = idx[r];
    if (n < 0 || n >= ds.size()) throw std::out_of_range("make_batch: sample index");
    std::memcpy(x.data.data() + static_cast<int64_t>(r) * per,
                ds.inputs.data.data() + n * per, sizeof(float) * static_cast<size_t>(per));
    std::memcpy(targets.data() + static_cast<int64_t>(r) * ds.sites_per_sample,
                ds.labels.data() + n * ds.sites_per_sample,
                sizeof(int32_t) * static_cast<size_t>(ds.sites_per_sample));
  }
}

double train_model(ModelGraph& model, const Dataset& ds, const TrainConfig& cfg,
                   OptimizerState& opt, Rng& data_rng, const FreezeMask* freeze,
                   std::vector<double>* epoch_losses) {
  const int64_t n = ds.size();
  if (n == 0) throw std::invalid_argument("train_model: empty dataset");
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Workspace ws;
  Grads grads = zero_grads(model);
  Tensor x;
  std::vector<int32_t> targets;
  double last_epoch_loss = 0.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    if (cfg.shuffle) data_rng.shuffle(order);
    double sum_loss = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t end = std::min(n, start + cfg.batch_size);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + end);
      make_batch(ds, idx, x, targets);
      forward(model, x, ws);
      const double loss = backward(model, ws, targets, grads);
      if (cfg.lr_drop_step >= 0 && opt.step >= cfg.lr_drop_step &&
          opt.learning_rate > cfg.lr_drop_to)
        opt.learning_rate = cfg.lr_drop_to;
      sgd_step(model, grads, opt, freeze);
      sum_loss += loss;
      ++batches;
    }
    last_epoch_loss = sum_loss / static_cast<double>(batches);
    if (epoch_losses) epoch_losses->push_back(last_epoch_loss);
  }
  return last_epoch_loss;
}

std::vector<int32_t> site_predictions(const Tensor& probs) {
  const ClassLayout lo = class_layout(probs.shape);
  std::vector<int32_t> out(lo.sites());
  for (int64_t o = 0; o < lo.outer; ++o) {
    for (int64_t i = 0; i < lo.inner; ++i) {
      const int64_t base = (o * lo.classes) * lo.inner + i;
      int best = 0;
      float bestp = probs.data[base];
      for (int c = 1; c < lo.classes; ++c) {
        const float p = probs.data[base + static_cast<int64_t>(c) * lo.inner];
        if (p > bestp) {
          bestp = p;
          best = c;
        }
      }
      out[o * lo.inner + i] = best;
    }
  }
  return out;
}

double accuracy_on(const ModelGraph& model, const Dataset& ds, int batch_size) {
  const int64_t n = ds.size();
  if (n == 0) throw std::invalid_argument("accuracy_on: empty dataset");
  Workspace ws;
  Tensor x;
  std::vector<int32_t> targets;
  int64_t hit = 0, total = 0;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min(n, start + batch_size);
    std::vector<int64_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    make_batch(ds, idx, x, targets);
    const Tensor& probs = forward(model, x, ws);
    const std::vector<int32_t> pred = site_predictions(probs);
    for (size_t i = 0; i < pred.size(); ++i) {
      hit += (pred[i] == targets[i]) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace sqw
