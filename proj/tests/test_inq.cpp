#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "sqw/data.hpp"
#include "sqw/inq.hpp"
#include "sqw/model.hpp"

using namespace sqw;

namespace {

ModelGraph small_cls_model(uint64_t seed) {
  ModelGraph m = build_model<float>(
      {1, 12, 12}, {make_conv2d(4, 3), make_relu(), make_maxpool2x2(), make_dense(8),
                    make_softmax_output()});
  Rng rng(seed);
  init_model(m, rng);
  return m;
}

}  // namespace

TEST_CASE("check_schedule rejects malformed schedules") {
  auto sched = [](std::vector<double> f, int e = 1) {
    InqSchedule s;
    s.fractions = std::move(f);
    s.epochs_per_step = e;
    return s;
  };
  CHECK_NOTHROW(check_schedule(sched({0.5, 0.75, 0.875, 1.0})));
  CHECK_NOTHROW(check_schedule(sched({1.0}, 0)));
  CHECK_THROWS(check_schedule(sched({})));
  CHECK_THROWS(check_schedule(sched({0.5, 0.5, 1.0})));
  CHECK_THROWS(check_schedule(sched({0.75, 0.5, 1.0})));
  CHECK_THROWS(check_schedule(sched({0.5, 1.2})));
  CHECK_THROWS(check_schedule(sched({0.5, 0.9})));
  CHECK_THROWS(check_schedule(sched({0.5, 1.0}, -1)));
}

TEST_CASE("partition_layer magnitude picks the largest magnitudes, ties by index") {
  Rng rng(1);
  const std::vector<float> w{0.5f, -0.1f, 0.3f, 0.05f};
  const std::vector<uint8_t> all_free(4, 1);
  CHECK(partition_layer(w, all_free, 0.5, PartitionStrategy::magnitude, rng) ==
        std::vector<int64_t>{0, 2});

  const std::vector<float> tied{0.3f, -0.3f, 0.1f};
  CHECK(partition_layer(tied, std::vector<uint8_t>(3, 1), 1.0 / 3.0,
                        PartitionStrategy::magnitude, rng) == std::vector<int64_t>{0});
}

TEST_CASE("partition_layer target count rounds half up") {
  Rng rng(1);
  const std::vector<float> w{5, 4, 3, 2, 1};
  const auto picked =
      partition_layer(w, std::vector<uint8_t>(5, 1), 0.5, PartitionStrategy::magnitude, rng);
  CHECK(picked == std::vector<int64_t>{0, 1, 2});  // llround(2.5) = 3
}

TEST_CASE("partition_layer accumulates across steps and rejects regressions") {
  Rng rng(1);
  const std::vector<float> w{0.5f, -0.1f, 0.3f, 0.05f};
  std::vector<uint8_t> mask(4, 1);
  mask[0] = mask[2] = 0;  // {0,2} already quantized
  // Threshold is recomputed over the remaining free weights.
  CHECK(partition_layer(w, mask, 0.75, PartitionStrategy::magnitude, rng) ==
        std::vector<int64_t>{1});
  // Same fraction again: nothing more to pick.
  CHECK(partition_layer(w, mask, 0.5, PartitionStrategy::magnitude, rng).empty());
  CHECK_THROWS_AS(partition_layer(w, mask, 0.25, PartitionStrategy::magnitude, rng),
                  std::invalid_argument);
  CHECK_THROWS(partition_layer(w, mask, 1.5, PartitionStrategy::magnitude, rng));
  CHECK_THROWS(partition_layer(w, std::vector<uint8_t>(3, 1), 0.5,
                               PartitionStrategy::magnitude, rng));
}

TEST_CASE("partition_layer magnitude property: picked dominate the remaining free set") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> w(64);
    for (auto& v : w) v = static_cast<float>(rng.normal());
    std::vector<uint8_t> mask(64, 1);
    for (auto& b : mask) b = rng.uniform() < 0.3 ? 0 : 1;
    const double f = rng.uniform(0.0, 1.0);
    std::vector<int64_t> picked;
    try {
      picked = partition_layer(w, mask, f, PartitionStrategy::magnitude, rng);
    } catch (const std::invalid_argument&) {
      continue;  // fraction below the already-quantized count
    }
    float min_picked = 1e30f;
    for (int64_t i : picked) {
      CHECK(mask[static_cast<size_t>(i)] == 1);
      min_picked = std::min(min_picked, std::abs(w[static_cast<size_t>(i)]));
    }
    const std::set<int64_t> in(picked.begin(), picked.end());
    CHECK(in.size() == picked.size());
    if (!picked.empty())
      for (size_t i = 0; i < w.size(); ++i)
        if (mask[i] && !in.count(static_cast<int64_t>(i)))
          CHECK(std::abs(w[i]) <= min_picked);
  }
}

TEST_CASE("partition_layer random strategy samples the free set deterministically") {
  const std::vector<float> w(100, 1.0f);
  const std::vector<uint8_t> mask(100, 1);
  Rng a(5), b(5), c(6);
  const auto pa = partition_layer(w, mask, 0.37, PartitionStrategy::random, a);
  const auto pb = partition_layer(w, mask, 0.37, PartitionStrategy::random, b);
  const auto pc = partition_layer(w, mask, 0.37, PartitionStrategy::random, c);
  CHECK(pa.size() == 37);
  CHECK(pa == pb);
  CHECK(pa != pc);
  CHECK(std::is_sorted(pa.begin(), pa.end()));
  CHECK(std::set<int64_t>(pa.begin(), pa.end()).size() == 37);
}

TEST_CASE("init_partition derives per-tensor level sets and leaves biases alone") {
  ModelGraph m = small_cls_model(31);
  const PartitionState st = init_partition(m, 5);
  REQUIRE(st.units.size() == m.layers.size());

  const auto& conv_w = st.units[0][0];
  CHECK(conv_w.active);
  CHECK(conv_w.level_set.bit_width == 5);
  double max_abs = 0.0;
  for (float v : m.layers[0].params[0].value.data)
    max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
  CHECK(conv_w.level_set.n1 == derive_level_set(max_abs, 5).n1);
  CHECK(conv_w.quantized_count() == 0);

  CHECK_FALSE(st.units[0][1].active);  // conv bias
  CHECK_FALSE(st.units[3][1].active);  // dense bias
  CHECK(st.quantized_fraction() == 0.0);
  CHECK_FALSE(st.fully_quantized());

  const PartitionState ov = init_partition(m, 5, 4.0);
  CHECK(ov.units[0][0].level_set.n1 == 2);
  CHECK(ov.units[3][0].level_set.n1 == 2);
}

TEST_CASE("init_partition on an all-zero tensor needs the override") {
  ModelGraph m = build_model<float>({4}, {make_dense(2), make_softmax_output()});
  CHECK_THROWS_AS(init_partition(m, 5), std::runtime_error);
  CHECK_NOTHROW(init_partition(m, 5, 1.0));
}

TEST_CASE("quantize_group writes levels, codes, and mask bits together") {
  ModelGraph m = small_cls_model(32);
  PartitionState st = init_partition(m, 5);
  Rng rng(2);
  auto& w = m.layers[0].params[0].value.data;
  const auto pos = partition_layer(w, st.units[0][0].free_mask, 0.5,
                                   PartitionStrategy::magnitude, rng);
  quantize_group(st, m, 0, 0, pos);

  const auto& u = st.units[0][0];
  CHECK(u.quantized_count() == static_cast<int64_t>(pos.size()));
  for (int64_t i : pos) {
    CHECK(u.free_mask[static_cast<size_t>(i)] == 0);
    CHECK(static_cast<double>(w[static_cast<size_t>(i)]) ==
          decode_level(u.codes[static_cast<size_t>(i)], u.level_set));
  }
  check_partition_invariants(st, m);

  CHECK_THROWS_WITH_AS(quantize_group(st, m, 0, 0, {pos[0]}),
                       "quantize_group: position already quantized", std::invalid_argument);
  CHECK_THROWS_AS(quantize_group(st, m, 0, 1, {0}), std::invalid_argument);  // bias
  CHECK_THROWS_AS(quantize_group(st, m, 0, 0, {static_cast<int64_t>(w.size())}),
                  std::out_of_range);
}

TEST_CASE("freeze_mask_from marks exactly the quantized positions") {
  ModelGraph m = small_cls_model(33);
  PartitionState st = init_partition(m, 4);
  Rng rng(3);
  auto& w = m.layers[3].params[0].value.data;
  const auto pos =
      partition_layer(w, st.units[3][0].free_mask, 0.25, PartitionStrategy::random, rng);
  quantize_group(st, m, 3, 0, pos);

  const FreezeMask fm = freeze_mask_from(st, m);
  REQUIRE(fm.size() == m.layers.size());
  CHECK(fm[3][1].empty());  // bias: all free
  const std::set<int64_t> in(pos.begin(), pos.end());
  for (size_t i = 0; i < fm[3][0].size(); ++i)
    CHECK(fm[3][0][i] == (in.count(static_cast<int64_t>(i)) ? 1 : 0));
}

TEST_CASE("check_partition_invariants detects a moved quantized weight") {
  ModelGraph m = small_cls_model(34);
  PartitionState st = init_partition(m, 5);
  Rng rng(4);
  auto& w = m.layers[0].params[0].value.data;
  quantize_group(st, m, 0, 0,
                 partition_layer(w, st.units[0][0].free_mask, 1.0,
                                 PartitionStrategy::magnitude, rng));
  CHECK_NOTHROW(check_partition_invariants(st, m));
  // Any drift of a frozen weight must be caught.
  int64_t qpos = -1;
  for (size_t i = 0; i < st.units[0][0].free_mask.size(); ++i)
    if (!st.units[0][0].free_mask[i] && w[i] != 0.0f) qpos = static_cast<int64_t>(i);
  REQUIRE(qpos >= 0);
  w[static_cast<size_t>(qpos)] *= 1.0000001f;
  CHECK_THROWS_AS(check_partition_invariants(st, m), std::logic_error);
}

TEST_CASE("stepwise fractions land within one weight per tensor") {
  ModelGraph m = small_cls_model(35);
  PartitionState st = init_partition(m, 5);
  Rng rng(5);
  for (const double f : {0.5, 0.75, 0.875, 1.0}) {
    for (size_t l = 0; l < m.layers.size(); ++l)
      for (size_t p = 0; p < m.layers[l].params.size(); ++p) {
        if (!st.units[l][p].active) continue;
        const auto& w = m.layers[l].params[p].value.data;
        quantize_group(st, m, static_cast<int>(l), static_cast<int>(p),
                       partition_layer(w, st.units[l][p].free_mask, f,
                                       PartitionStrategy::magnitude, rng));
        const auto n = static_cast<double>(w.size());
        CHECK(std::abs(st.units[l][p].quantized_count() - f * n) <= 1.0);
      }
    check_partition_invariants(st, m);
  }
  CHECK(st.fully_quantized());
  CHECK(st.quantized_fraction() == 1.0);
}

TEST_CASE("inq_train quantizes everything and keeps frozen weights bit-stable") {
  ClsParams p;
  p.count = 64;
  p.image_size = 12;
  const Dataset train = generate_cls(p, 51);
  p.count = 32;
  const Dataset val = generate_cls(p, 52);

  ModelGraph m = small_cls_model(36);
  InqSchedule sched;
  sched.fractions = {0.5, 0.75, 0.875, 1.0};
  sched.epochs_per_step = 1;
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  tc.lr = 1e-3;
  Rng rng(6);
  PartitionState st;
  const InqLog log =
      inq_train(m, train, &val, sched, 5, tc, PartitionStrategy::magnitude, rng, {}, &st);

  REQUIRE(log.steps.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(log.steps[i].target_fraction == sched.fractions[i]);
    CHECK(log.steps[i].achieved_fraction ==
          doctest::Approx(sched.fractions[i]).epsilon(0.01));
    CHECK(log.steps[i].val_accuracy >= 0.0);
  }
  CHECK(st.fully_quantized());
  // Retraining between steps must not have moved any quantized weight:
  // every weight decodes exactly from the code assigned when it was frozen.
  check_partition_invariants(st, m);
  // And every quantizable weight is a representable level or zero.
  for (size_t l = 0; l < m.layers.size(); ++l)
    for (size_t q = 0; q < m.layers[l].params.size(); ++q) {
      if (!st.units[l][q].active) continue;
      for (float wv : m.layers[l].params[q].value.data)
        CHECK_NOTHROW(encode_level(wv, st.units[l][q].level_set));
    }
}

TEST_CASE("inq_train with a one-step schedule is one-shot quantization") {
  ModelGraph m = small_cls_model(37);
  const ModelGraph before = m;
  InqSchedule sched;
  sched.fractions = {1.0};
  sched.epochs_per_step = 0;
  TrainConfig tc;
  Rng rng(7);
  Dataset unused;
  PartitionState st;
  const InqLog log = inq_train(m, unused, nullptr, sched, 5, tc,
                               PartitionStrategy::magnitude, rng, {}, &st);
  REQUIRE(log.steps.size() == 1);
  CHECK(log.steps[0].val_accuracy == -1.0);
  CHECK(st.fully_quantized());
  // No retraining: each weight is exactly the quantization of the original.
  for (size_t l = 0; l < m.layers.size(); ++l)
    for (size_t q = 0; q < m.layers[l].params.size(); ++q) {
      if (!st.units[l][q].active) continue;
      const auto& now = m.layers[l].params[q].value.data;
      const auto& was = before.layers[l].params[q].value.data;
      for (size_t i = 0; i < now.size(); ++i)
        CHECK(static_cast<double>(now[i]) ==
              quantize_value(was[i], st.units[l][q].level_set));
    }
}

TEST_CASE("strategy names round-trip") {
  CHECK(partition_strategy_from_name("magnitude") == PartitionStrategy::magnitude);
  CHECK(partition_strategy_from_name("random") == PartitionStrategy::random);
  CHECK(partition_strategy_name(PartitionStrategy::random) == std::string("random"));
  CHECK_THROWS(partition_strategy_from_name("largest"));
}
