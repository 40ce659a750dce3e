#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "sqw/data.hpp"
#include "sqw/ensemble.hpp"
#include "sqw/model.hpp"

using namespace sqw;

namespace {

ModelGraph dense_net(uint64_t seed, const std::vector<int>& input = {6},
                     int hidden = 5, int classes = 3) {
  ModelGraph m = build_model<float>(
      input, {make_dense(hidden), make_relu(), make_dense(classes), make_softmax_output()});
  Rng rng(seed);
  init_model(m, rng);
  return m;
}

Tensor random_batch(const std::vector<int>& input_shape, int n, uint64_t seed) {
  std::vector<int> shape{n};
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  Tensor t(shape);
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

// Single dense unit pair driven to saturation: softmax output ~ one-hot,
// direction controlled by the weight sign.
ModelGraph saturated_pair(float w) {
  ModelGraph m = build_model<float>({1}, {make_dense(2), make_softmax_output()});
  m.layers[0].params[0].value.data = {w, -w};
  m.layers[0].params[1].value.data = {0.0f, 0.0f};
  return m;
}

}  // namespace

TEST_CASE("ensemble_predict averages member probabilities") {
  Ensemble ens;
  ens.members.push_back(dense_net(1));
  ens.members.push_back(dense_net(2));
  ens.members.push_back(dense_net(3));
  const Tensor x = random_batch({6}, 4, 10);

  Workspace ws;
  std::vector<double> acc(4 * 3, 0.0);
  for (const auto& m : ens.members) {
    const Tensor y = forward(m, x, ws);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(y.data[i]);
  }
  const Tensor mean = ensemble_predict(ens, x);
  REQUIRE(mean.shape == std::vector<int>{4, 3});
  for (size_t i = 0; i < acc.size(); ++i)
    CHECK(mean.data[i] == static_cast<float>(acc[i] / 3.0));
  // Rows stay distributions.
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += mean.data[r * 3 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  CHECK_THROWS_AS(ensemble_predict(Ensemble{}, x), std::invalid_argument);

  Ensemble mixed;
  mixed.members.push_back(dense_net(1, {6}, 5, 3));
  mixed.members.push_back(dense_net(2, {6}, 5, 4));
  CHECK_THROWS_AS(ensemble_predict(mixed, x), std::invalid_argument);
}

TEST_CASE("uncertainty needs two members and vanishes for identical ones") {
  Ensemble one;
  one.members.push_back(dense_net(4));
  const Tensor x = random_batch({6}, 3, 11);
  CHECK_THROWS_AS(uncertainty_scores(one, x), std::invalid_argument);

  Ensemble twins;
  twins.members.push_back(dense_net(4));
  twins.members.push_back(dense_net(4));
  for (double s : uncertainty_scores(twins, x)) CHECK(s == 0.0);
}

TEST_CASE("uncertainty matches the two-member variance formula") {
  Ensemble ens;
  ens.members.push_back(dense_net(5));
  ens.members.push_back(dense_net(6));
  const Tensor x = random_batch({6}, 5, 12);

  Workspace ws;
  const Tensor y1 = forward(ens.members[0], x, ws);
  const Tensor y2 = forward(ens.members[1], x, ws);
  const auto scores = uncertainty_scores(ens, x);
  REQUIRE(scores.size() == 5);
  for (int s = 0; s < 5; ++s) {
    double expect = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = (static_cast<double>(y1.data[s * 3 + c]) - y2.data[s * 3 + c]) / 2.0;
      expect += d * d;
    }
    expect /= 3.0;
    CHECK(scores[static_cast<size_t>(s)] == doctest::Approx(expect).epsilon(1e-12));
  }

  // Member order does not matter.
  Ensemble flipped;
  flipped.members.push_back(ens.members[1]);
  flipped.members.push_back(ens.members[0]);
  const auto swapped = uncertainty_scores(flipped, x);
  for (size_t i = 0; i < scores.size(); ++i)
    CHECK(scores[i] == doctest::Approx(swapped[i]).epsilon(1e-14));

  // Single-sample helper agrees with the batched scores.
  Tensor x1({1, 6});
  std::copy(x.data.begin(), x.data.begin() + 6, x1.data.begin());
  CHECK(uncertainty_score(ens, x1) == doctest::Approx(scores[0]).epsilon(1e-12));
  CHECK_THROWS_AS(uncertainty_score(ens, x), std::invalid_argument);
}

TEST_CASE("opposed one-hot members score one quarter") {
  Ensemble ens;
  ens.members.push_back(saturated_pair(20.0f));
  ens.members.push_back(saturated_pair(-20.0f));
  Tensor x({1, 1});
  x.data[0] = 1.0f;
  // Probs are (~1, ~0) and (~0, ~1): per-element variance 0.25.
  CHECK(uncertainty_score(ens, x) == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("feature descriptors pool the penultimate activation") {
  SUBCASE("rank-2 comes back verbatim") {
    Ensemble ens;
    ens.members.push_back(dense_net(7));
    ens.members.push_back(dense_net(8));  // only the first member is used
    const Tensor x = random_batch({6}, 3, 13);
    const auto feats = feature_descriptors(ens, x);
    REQUIRE(feats.size() == 3);
    Workspace ws;
    forward(ens.members[0], x, ws);
    const Tensor& act = ws.acts[ens.members[0].layers.size() - 1];
    REQUIRE(act.rank() == 2);
    for (int s = 0; s < 3; ++s)
      for (int c = 0; c < act.dim(1); ++c)
        CHECK(feats[static_cast<size_t>(s)][static_cast<size_t>(c)] ==
              act.data[s * act.dim(1) + c]);
  }

  SUBCASE("rank-4 pools over space") {
    Ensemble ens;
    ModelGraph m = build_model<float>({1, 8, 8}, {make_conv2d(3, 3), make_relu(),
                                                  make_conv2d(2, 3), make_softmax_output()});
    Rng rng(9);
    init_model(m, rng);
    ens.members.push_back(std::move(m));
    const Tensor x = random_batch({1, 8, 8}, 2, 14);
    const auto feats = feature_descriptors(ens, x);
    REQUIRE(feats.size() == 2);
    REQUIRE(feats[0].size() == 2);  // channels of the penultimate conv
    Workspace ws;
    forward(ens.members[0], x, ws);
    const Tensor& act = ws.acts[ens.members[0].layers.size() - 1];
    REQUIRE(act.shape == std::vector<int>{2, 2, 4, 4});
    for (int s = 0; s < 2; ++s)
      for (int c = 0; c < 2; ++c) {
        double sum = 0.0;
        for (int i = 0; i < 16; ++i) sum += act.data[(s * 2 + c) * 16 + i];
        CHECK(feats[static_cast<size_t>(s)][static_cast<size_t>(c)] ==
              doctest::Approx(sum / 16.0).epsilon(1e-6));
      }
  }

  SUBCASE("rank-3 pools over time") {
    Ensemble ens;
    ModelGraph m = build_model<float>({5, 4}, {make_birnn(3), make_dense(2),
                                               make_softmax_output()});
    Rng rng(10);
    init_model(m, rng);
    ens.members.push_back(std::move(m));
    const Tensor x = random_batch({5, 4}, 2, 15);
    const auto feats = feature_descriptors(ens, x);
    REQUIRE(feats[0].size() == 2);  // dense units, pooled over 5 timesteps
    Workspace ws;
    forward(ens.members[0], x, ws);
    const Tensor& act = ws.acts[ens.members[0].layers.size() - 1];
    REQUIRE(act.shape == std::vector<int>{2, 5, 2});
    for (int s = 0; s < 2; ++s)
      for (int c = 0; c < 2; ++c) {
        double sum = 0.0;
        for (int t = 0; t < 5; ++t) sum += act.data[(s * 5 + t) * 2 + c];
        CHECK(feats[static_cast<size_t>(s)][static_cast<size_t>(c)] ==
              doctest::Approx(sum / 5.0).epsilon(1e-6));
      }
  }

  Ensemble none;
  CHECK_THROWS_AS(feature_descriptors(none, random_batch({6}, 1, 16)),
                  std::invalid_argument);
}

TEST_CASE("representative_select is greedy max-coverage with index ties") {
  const std::vector<float> e1{1.0f, 0.0f};
  const std::vector<float> e2{0.0f, 1.0f};

  // Five pool points near e1, one near e2: coverage favors e1 first.
  const std::vector<std::vector<float>> cands{e2, e1};
  const std::vector<std::vector<float>> pool{e1, e1, e1, e1, e1, e2};
  CHECK(representative_select(cands, pool, 1) == std::vector<int64_t>{1});
  CHECK(representative_select(cands, pool, 2) == std::vector<int64_t>{1, 0});

  // Identical candidates: ties resolve to the lower index, in order.
  const std::vector<std::vector<float>> same{e1, e1, e1};
  CHECK(representative_select(same, pool, 2) == std::vector<int64_t>{0, 1});

  CHECK(representative_select(cands, pool, 0).empty());
  CHECK_THROWS_AS(representative_select(cands, pool, 3), std::invalid_argument);
  CHECK_THROWS_AS(representative_select(cands, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(representative_select({{1.0f, 0.0f, 0.0f}}, pool, 1),
                  std::invalid_argument);
}

TEST_CASE("suggest_training_set moves R picks per iteration out of the pool") {
  ClsParams p;
  p.count = 30;
  p.image_size = 12;
  const Dataset seed_set = generate_cls(p, 41);
  p.count = 60;
  const Dataset pool = generate_cls(p, 42);

  int calls = 0;
  std::vector<int64_t> labeled_sizes;
  const EnsembleTrainer trainer = [&](const Dataset& labeled) {
    ++calls;
    labeled_sizes.push_back(labeled.size());
    Ensemble e;
    e.members.push_back(dense_net(100, {1, 12, 12}, 6, 8));
    e.members.push_back(dense_net(101, {1, 12, 12}, 6, 8));
    return e;
  };

  SuggestionConfig cfg;
  cfg.uncertainty_take = 10;
  cfg.representative_take = 4;
  cfg.iterations = 3;
  const SuggestionResult res = suggest_training_set(seed_set, pool, cfg, trainer);

  CHECK(res.selected.size() == 12);
  CHECK_FALSE(res.pool_exhausted);
  CHECK(calls == 3);
  CHECK(labeled_sizes == std::vector<int64_t>{30, 34, 38});
  std::set<int64_t> uniq(res.selected.begin(), res.selected.end());
  CHECK(uniq.size() == res.selected.size());
  for (int64_t i : res.selected) {
    CHECK(i >= 0);
    CHECK(i < 60);
  }

  // Deterministic trainer, deterministic result.
  calls = 0;
  labeled_sizes.clear();
  const SuggestionResult again = suggest_training_set(seed_set, pool, cfg, trainer);
  CHECK(again.selected == res.selected);

  // Without retraining the ensemble is built once.
  calls = 0;
  labeled_sizes.clear();
  SuggestionConfig frozen = cfg;
  frozen.retrain_each_iteration = false;
  suggest_training_set(seed_set, pool, frozen, trainer);
  CHECK(calls == 1);
}

TEST_CASE("suggest_training_set reports pool exhaustion") {
  ClsParams p;
  p.count = 6;
  p.image_size = 12;
  const Dataset seed_set = generate_cls(p, 43);
  p.count = 7;
  const Dataset pool = generate_cls(p, 44);

  const EnsembleTrainer trainer = [&](const Dataset&) {
    Ensemble e;
    e.members.push_back(dense_net(102, {1, 12, 12}, 6, 8));
    e.members.push_back(dense_net(103, {1, 12, 12}, 6, 8));
    return e;
  };

  SuggestionConfig cfg;
  cfg.uncertainty_take = 4;
  cfg.representative_take = 4;
  cfg.iterations = 5;
  const SuggestionResult res = suggest_training_set(seed_set, pool, cfg, trainer);
  CHECK(res.selected.size() == 7);  // everything got selected
  CHECK(res.pool_exhausted);
  std::set<int64_t> uniq(res.selected.begin(), res.selected.end());
  CHECK(uniq.size() == 7);

  SuggestionConfig bad = cfg;
  bad.representative_take = 5;
  CHECK_THROWS_AS(suggest_training_set(seed_set, pool, bad, trainer), std::invalid_argument);
  bad = cfg;
  bad.iterations = 0;
  CHECK_THROWS_AS(suggest_training_set(seed_set, pool, bad, trainer), std::invalid_argument);
  CHECK_THROWS_AS(suggest_training_set(seed_set, Dataset{}, cfg, trainer),
                  std::invalid_argument);
}
