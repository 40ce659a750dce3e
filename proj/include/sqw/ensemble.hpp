#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "sqw/model.hpp"
#include "sqw/train.hpp"

namespace sqw {

struct Ensemble {
  std::vector<ModelGraph> members;

  int size() const { return static_cast<int>(members.size()); }
};

// Elementwise mean of member probability outputs (a distribution again).
Tensor ensemble_predict(const Ensemble& ens, const Tensor& batch);

// Per-sample mean over output elements of the across-member population
// variance of predicted probabilities. Needs K >= 2.
std::vector<double> uncertainty_scores(const Ensemble& ens, const Tensor& batch);
double uncertainty_score(const Ensemble& ens, const Tensor& sample_batch1);

// Mean-pooled penultimate-layer activation of the first member: rank-4
// activations pool over the spatial axes, rank-3 over time. One descriptor
// per batch row.
std::vector<std::vector<float>> feature_descriptors(const Ensemble& ens, const Tensor& batch);

// Greedy max-coverage: picks R candidate indices maximizing
// sum over the pool of the best cosine similarity to any picked candidate.
// Ties fall to the lower candidate index.
std::vector<int64_t> representative_select(const std::vector<std::vector<float>>& candidates,
                                           const std::vector<std::vector<float>>& pool, int R);

struct SuggestionConfig {
  int uncertainty_take = 16;    // U
  int representative_take = 8;  // R <= U
  int iterations = 4;           // T
  std::optional<int> quantize_suggestors;  // bit width for the scoring ensemble
  bool retrain_each_iteration = true;
};

struct SuggestionResult {
  std::vector<int64_t> selected;  // pool indices, selection order
  bool pool_exhausted = false;
};

// Builds a K-member ensemble from the currently labeled set. The trainer owns
// seeding and the optional quantization of members (quantize_suggestors).
using EnsembleTrainer = std::function<Ensemble(const Dataset& labeled)>;

// Iterates: train ensemble on seed+selected, rank the remaining pool by
// uncertainty, keep the top U, pick R representatives, move them into the
// labeled set. Returns accumulated pool indices (at most R*T).
SuggestionResult suggest_training_set(const Dataset& seed_labeled, const Dataset& pool,
                                      const SuggestionConfig& cfg,
                                      const EnsembleTrainer& trainer);

}  // namespace sqw
