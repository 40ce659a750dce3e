#include "sqw/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sqw/data.hpp"

namespace sqw {

Tensor ensemble_predict(const Ensemble& ens, const Tensor& batch) {
  if (ens.members.empty()) throw std::invalid_argument("ensemble_predict: no members");
  Workspace ws;
  std::vector<double> acc;
  std::vector<int> shape;
  for (const auto& m : ens.members) {
    const Tensor& probs = forward(m, batch, ws);
    if (shape.empty()) {
      shape = probs.shape;
      acc.assign(static_cast<size_t>(probs.numel()), 0.0);
    } else if (shape != probs.shape) {
      throw std::invalid_argument("ensemble_predict: member output shapes differ");
    }
    for (int64_t i = 0; i < probs.numel(); ++i)
      acc[static_cast<size_t>(i)] += static_cast<double>(probs.data[i]);
  }
  Tensor out(shape);
  const double k = static_cast<double>(ens.members.size());
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[i] = static_cast<float>(acc[static_cast<size_t>(i)] / k);
  return out;
}

std::vector<double> uncertainty_scores(const Ensemble& ens, const Tensor& batch) {
  if (ens.size() < 2) throw std::invalid_argument("uncertainty undefined for K < 2");
  const int64_t n = batch.dim(0);
  Workspace ws;
  std::vector<double> sum, sumsq;
  int64_t per = 0;
  for (const auto& m : ens.members) {
    const Tensor& probs = forward(m, batch, ws);
    if (sum.empty()) {
      sum.assign(static_cast<size_t>(probs.numel()), 0.0);
      sumsq.assign(static_cast<size_t>(probs.numel()), 0.0);
      per = probs.numel() / n;
    } else if (static_cast<int64_t>(sum.size()) != probs.numel()) {
      throw std::invalid_argument("uncertainty: member output shapes differ");
    }
    for (int64_t i = 0; i < probs.numel(); ++i) {
      const double p = static_cast<double>(probs.data[i]);
      sum[static_cast<size_t>(i)] += p;
      sumsq[static_cast<size_t>(i)] += p * p;
    }
  }
  const double k = static_cast<double>(ens.size());
  std::vector<double> scores(static_cast<size_t>(n), 0.0);
  for (int64_t s = 0; s < n; ++s) {
    double total = 0.0;
    for (int64_t i = s * per; i < (s + 1) * per; ++i) {
      const double mean = sum[static_cast<size_t>(i)] / k;
      const double var = sumsq[static_cast<size_t>(i)] / k - mean * mean;
      total += std::max(0.0, var);  // clip tiny negative round-off
    }
    scores[static_cast<size_t>(s)] = total / static_cast<double>(per);
  }
  return scores;
}

double uncertainty_score(const Ensemble& ens, const Tensor& sample_batch1) {
  if (sample_batch1.dim(0) != 1)
    throw std::invalid_argument("uncertainty_score expects a single-sample batch");
  return uncertainty_scores(ens, sample_batch1)[0];
}

std::vector<std::vector<float>> feature_descriptors(const Ensemble& ens, const Tensor& batch) {
  if (ens.members.empty()) throw std::invalid_argument("feature_descriptors: no members");
  const ModelGraph& m = ens.members.front();
  if (m.layers.size() < 2)
    throw std::invalid_argument("feature_descriptors: model has no penultimate layer");
  Workspace ws;
  forward(m, batch, ws);
  const Tensor& act = ws.acts[m.layers.size() - 1];  // penultimate layer output
  const int64_t n = act.dim(0);
  std::vector<std::vector<float>> out(static_cast<size_t>(n));
  if (act.rank() == 2) {
    const int f = act.dim(1);
    for (int64_t s = 0; s < n; ++s)
      out[static_cast<size_t>(s)].assign(act.data.begin() + s * f,
                                         act.data.begin() + (s + 1) * f);
    return out;
  }
  // Rank 3 [N,T,C] pools over T; rank 4 [N,C,H,W] pools over H,W.
  const bool time_major = act.rank() == 3;
  const int channels = time_major ? act.dim(2) : act.dim(1);
  const int64_t spatial = time_major ? act.dim(1) : static_cast<int64_t>(act.dim(2)) * act.dim(3);
  for (int64_t s = 0; s < n; ++s) {
    std::vector<double> acc(static_cast<size_t>(channels), 0.0);
    for (int64_t i = 0; i < spatial; ++i) {
      for (int c = 0; c < channels; ++c) {
        const int64_t idx = time_major
                                ? (s * spatial + i) * channels + c
                                : (s * channels + c) * spatial + i;
        acc[static_cast<size_t>(c)] += static_cast<double>(act.data[idx]);
      }
    }
    auto& d = out[static_cast<size_t>(s)];
    d.resize(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c)
      d[static_cast<size_t>(c)] =
          static_cast<float>(acc[static_cast<size_t>(c)] / static_cast<double>(spatial));
  }
  return out;
}

static double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<int64_t> representative_select(const std::vector<std::vector<float>>& candidates,
                                           const std::vector<std::vector<float>>& pool, int R) {
  if (pool.empty()) throw std::invalid_argument("representative_select: empty pool");
  if (R > static_cast<int>(candidates.size()))
    throw std::invalid_argument("representative_select: R exceeds candidate count");
  for (const auto& c : candidates)
    if (c.size() != pool.front().size())
      throw std::invalid_argument("representative_select: descriptor length mismatch");
  std::vector<std::vector<double>> sim(candidates.size(),
                                       std::vector<double>(pool.size(), 0.0));
  for (size_t c = 0; c < candidates.size(); ++c)
    for (size_t x = 0; x < pool.size(); ++x) sim[c][x] = cosine(candidates[c], pool[x]);
  std::vector<double> best(pool.size(), -1.0);  // max similarity to the picked set
  std::vector<uint8_t> used(candidates.size(), 0);
  std::vector<int64_t> picked;
  for (int round = 0; round < R; ++round) {
    int arg = -1;
    double arg_gain = -std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < candidates.size(); ++c) {
      if (used[c]) continue;
      double gain = 0.0;
      for (size_t x = 0; x < pool.size(); ++x) gain += std::max(best[x], sim[c][x]);
      if (gain > arg_gain) {  // strict: first index wins ties
        arg_gain = gain;
        arg = static_cast<int>(c);
      }
    }
    used[static_cast<size_t>(arg)] = 1;
    picked.push_back(arg);
    for (size_t x = 0; x < pool.size(); ++x)
      best[x] = std::max(best[x], sim[static_cast<size_t>(arg)][x]);
  }
  return picked;
}

SuggestionResult suggest_training_set(const Dataset& seed_labeled, const Dataset& pool,
                                      const SuggestionConfig& cfg,
                                      const EnsembleTrainer& trainer) {
  if (pool.size() == 0) throw std::invalid_argument("suggest_training_set: empty pool");
  if (cfg.representative_take > cfg.uncertainty_take)
    throw std::invalid_argument("suggest_training_set: R must not exceed U");
  if (cfg.iterations < 1) throw std::invalid_argument("suggest_training_set: T must be >= 1");
  Dataset labeled = seed_labeled;
  std::vector<int64_t> remaining(pool.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  SuggestionResult res;
  Ensemble ens;
  for (int it = 0; it < cfg.iterations; ++it) {
    if (remaining.empty()) {
      res.pool_exhausted = true;
      break;
    }
    if (it == 0 || cfg.retrain_each_iteration) ens = trainer(labeled);
    const Dataset rem = subset(pool, remaining);
    const std::vector<double> scores = uncertainty_scores(ens, rem.inputs);
    const int u = std::min<int>(cfg.uncertainty_take, static_cast<int>(remaining.size()));
    const int r = std::min(cfg.representative_take, u);
    if (static_cast<int>(remaining.size()) < cfg.uncertainty_take) res.pool_exhausted = true;
    // Top U by score, ties by ascending pool position.
    std::vector<int> order(remaining.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[static_cast<size_t>(a)] >
                                                scores[static_cast<size_t>(b)]; });
    std::vector<int64_t> cand_rows(order.begin(), order.begin() + u);
    const std::vector<std::vector<float>> pool_feats = feature_descriptors(ens, rem.inputs);
    std::vector<std::vector<float>> cand_feats;
    cand_feats.reserve(cand_rows.size());
    for (int64_t row : cand_rows) cand_feats.push_back(pool_feats[static_cast<size_t>(row)]);
    const std::vector<int64_t> picked_local = representative_select(cand_feats, pool_feats, r);
    std::vector<int64_t> picked_rows;
    picked_rows.reserve(picked_local.size());
    for (int64_t p : picked_local) picked_rows.push_back(cand_rows[static_cast<size_t>(p)]);
    std::vector<int64_t> picked_pool_idx;
    for (int64_t row : picked_rows) picked_pool_idx.push_back(remaining[static_cast<size_t>(row)]);
    append_samples(labeled, pool, picked_pool_idx);
    res.selected.insert(res.selected.end(), picked_pool_idx.begin(), picked_pool_idx.end());
    std::sort(picked_rows.begin(), picked_rows.end(), std::greater<int64_t>());
    for (int64_t row : picked_rows)
      remaining.erase(remaining.begin() + static_cast<size_t>(row));
  }
  return res;
}

}  // namespace sqw
