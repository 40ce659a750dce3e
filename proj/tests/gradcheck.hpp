#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sqw/model.hpp"
#include "sqw/rng.hpp"

namespace sqw_test {

// Central-difference gradient checks run on the double instantiation of the
// model: float cannot separate O(eps^2) truncation error from rounding at
// the 1e-4 relative tolerance.
using DModel = sqw::ModelGraphT<double>;
using DTensor = sqw::TensorT<double>;

inline double loss_of(const DModel& m, const DTensor& x, const std::vector<int32_t>& t) {
  sqw::WorkspaceT<double> ws;
  const DTensor& probs = sqw::forward(m, x, ws);
  return sqw::kern::xent_loss_and_logit_grad<double>(probs, t, nullptr);
}

struct GradCheck {
  double max_rel = 0.0;
  int checked = 0;
};

// Compares analytic parameter gradients against (L(w+e) - L(w-e)) / 2e on
// sampled coordinates. Relative error uses |a|+|f| with a small floor so
// near-zero gradient pairs compare absolutely.
inline GradCheck gradcheck_params(DModel& m, const DTensor& x,
                                  const std::vector<int32_t>& targets, sqw::Rng& rng,
                                  int samples_per_tensor = 12, double eps = 1e-3) {
  sqw::WorkspaceT<double> ws;
  sqw::forward(m, x, ws);
  auto grads = sqw::zero_grads(m);
  sqw::backward(m, ws, targets, grads);

  GradCheck res;
  for (size_t li = 0; li < m.layers.size(); ++li) {
    for (size_t pi = 0; pi < m.layers[li].params.size(); ++pi) {
      auto& value = m.layers[li].params[pi].value;
      const int64_t n = value.numel();
      for (int s = 0; s < samples_per_tensor && s < n; ++s) {
        const int64_t k = n <= samples_per_tensor
                              ? s
                              : static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n)));
        const double orig = value.data[static_cast<size_t>(k)];
        value.data[static_cast<size_t>(k)] = orig + eps;
        const double lp = loss_of(m, x, targets);
        value.data[static_cast<size_t>(k)] = orig - eps;
        const double lm = loss_of(m, x, targets);
        value.data[static_cast<size_t>(k)] = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double an = grads[li][pi].data[static_cast<size_t>(k)];
        const double rel =
            std::fabs(an - fd) / std::max(1e-3, std::fabs(an) + std::fabs(fd));
        res.max_rel = std::max(res.max_rel, rel);
        ++res.checked;
      }
    }
  }
  return res;
}

// Same comparison for the gradient w.r.t. the input batch.
inline GradCheck gradcheck_input(DModel& m, DTensor x, const std::vector<int32_t>& targets,
                                 sqw::Rng& rng, int samples = 12, double eps = 1e-3) {
  sqw::WorkspaceT<double> ws;
  sqw::forward(m, x, ws);
  auto grads = sqw::zero_grads(m);
  DTensor gx;
  sqw::backward(m, ws, targets, grads, &gx);

  GradCheck res;
  const int64_t n = x.numel();
  for (int s = 0; s < samples && s < n; ++s) {
    const int64_t k =
        n <= samples ? s : static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n)));
    const double orig = x.data[static_cast<size_t>(k)];
    x.data[static_cast<size_t>(k)] = orig + eps;
    const double lp = loss_of(m, x, targets);
    x.data[static_cast<size_t>(k)] = orig - eps;
    const double lm = loss_of(m, x, targets);
    x.data[static_cast<size_t>(k)] = orig;
    const double fd = (lp - lm) / (2.0 * eps);
    const double an = gx.data[static_cast<size_t>(k)];
    const double rel = std::fabs(an - fd) / std::max(1e-3, std::fabs(an) + std::fabs(fd));
    res.max_rel = std::max(res.max_rel, rel);
    ++res.checked;
  }
  return res;
}

// One small randomly initialized double model per layer kind, each with
// parameters upstream of the layer under test so its backward runs under FD.
struct GradCase {
  const char* name;
  DModel model;
  DTensor x;
  std::vector<int32_t> targets;
};

inline DTensor random_batch(const std::vector<int>& per_sample, int n, sqw::Rng& rng) {
  std::vector<int> shape{n};
  shape.insert(shape.end(), per_sample.begin(), per_sample.end());
  DTensor x(shape);
  for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
  return x;
}

inline std::vector<int32_t> random_targets(const DModel& m, int n, sqw::Rng& rng) {
  std::vector<int> s{n};
  const auto out = m.output_shape();
  s.insert(s.end(), out.begin(), out.end());
  const sqw::ClassLayout cl = sqw::class_layout(s);
  std::vector<int32_t> t(static_cast<size_t>(cl.sites()));
  for (auto& v : t) v = static_cast<int32_t>(rng.randint(0, cl.classes));
  return t;
}

inline std::vector<GradCase> gradcheck_cases(uint64_t seed) {
  using namespace sqw;
  Rng rng(seed);
  std::vector<GradCase> cases;
  auto add = [&](const char* name, const std::vector<int>& in,
                 const std::vector<LayerSpec>& specs, int batch) {
    GradCase c;
    c.name = name;
    c.model = build_model<double>(in, specs);
    init_model(c.model, rng);
    c.x = random_batch(in, batch, rng);
    c.targets = random_targets(c.model, batch, rng);
    cases.push_back(std::move(c));
  };

  add("dense", {5}, {make_dense(4), make_softmax_output()}, 3);
  add("dense_seq", {4, 6}, {make_dense(3), make_softmax_output()}, 2);
  add("dense_flat", {2, 4, 4}, {make_dense(3), make_softmax_output()}, 2);
  add("relu", {6}, {make_dense(5), make_relu(), make_dense(4), make_softmax_output()}, 3);
  add("conv2d", {2, 5, 5}, {make_conv2d(3, 3), make_softmax_output()}, 2);
  add("maxpool2x2", {1, 6, 6}, {make_conv2d(2, 3), make_maxpool2x2(), make_softmax_output()},
      2);
  add("upsample2x2", {1, 4, 4}, {make_conv2d(2, 3), make_upsample2x2(), make_softmax_output()},
      2);
  add("pad2d", {1, 4, 4}, {make_conv2d(2, 3), make_pad2d(1), make_softmax_output()}, 2);
  add("birnn", {4, 3}, {make_birnn(4), make_dense(3), make_softmax_output()}, 2);
  add("softmax_output", {5}, {make_dense(3), make_softmax_output()}, 4);
  return cases;
}

}  // namespace sqw_test
