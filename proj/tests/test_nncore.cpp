#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "gradcheck.hpp"
#include "sqw/data.hpp"
#include "sqw/model.hpp"
#include "sqw/optimizer.hpp"
#include "sqw/train.hpp"

using namespace sqw;

TEST_CASE("layer_output_shape contracts") {
  CHECK(layer_output_shape(make_dense(7), {5}) == std::vector<int>{7});
  CHECK(layer_output_shape(make_dense(7), {4, 5}) == std::vector<int>{4, 7});
  CHECK(layer_output_shape(make_dense(7), {2, 3, 3}) == std::vector<int>{7});
  CHECK(layer_output_shape(make_conv2d(8, 3), {2, 6, 6}) == std::vector<int>{8, 4, 4});
  CHECK(layer_output_shape(make_maxpool2x2(), {3, 6, 4}) == std::vector<int>{3, 3, 2});
  CHECK(layer_output_shape(make_upsample2x2(), {3, 3, 2}) == std::vector<int>{3, 6, 4});
  CHECK(layer_output_shape(make_pad2d(1), {3, 4, 4}) == std::vector<int>{3, 6, 6});
  CHECK(layer_output_shape(make_birnn(5), {7, 3}) == std::vector<int>{7, 10});
  CHECK_THROWS(layer_output_shape(make_maxpool2x2(), {3, 5, 4}));  // odd height
  CHECK_THROWS(layer_output_shape(make_conv2d(8, 3), {2, 2, 2}));  // kernel too big
}

TEST_CASE("build_model wires parameter shapes and names") {
  const ModelGraph m = build_model<float>(
      {1, 8, 8}, {make_conv2d(4, 3), make_relu(), make_maxpool2x2(), make_dense(10),
                  make_softmax_output()});
  REQUIRE(m.layers.size() == 5);
  REQUIRE(m.layers[0].params.size() == 2);
  CHECK(m.layers[0].params[0].name == "layer0.weight");
  CHECK(m.layers[0].params[0].value.shape == std::vector<int>{4, 1, 3, 3});
  CHECK(m.layers[0].params[0].quantizable);
  CHECK(m.layers[0].params[1].name == "layer0.bias");
  CHECK_FALSE(m.layers[0].params[1].quantizable);
  CHECK(m.layers[1].params.empty());
  CHECK(m.layers[3].params[0].value.shape == std::vector<int>{10, 4 * 3 * 3});
  CHECK(m.output_shape() == std::vector<int>{10});
  CHECK(m.param_count() == 4 * 9 + 4 + 10 * 36 + 10);
  CHECK(m.quantizable_param_count() == 4 * 9 + 10 * 36);

  const ModelGraph r = build_model<float>({6, 3}, {make_birnn(4), make_softmax_output()});
  REQUIRE(r.layers[0].params.size() == 6);
  CHECK(r.layers[0].params[0].name == "layer0.wx_f");
  CHECK(r.layers[0].params[0].value.shape == std::vector<int>{4, 3});
  CHECK(r.layers[0].params[1].value.shape == std::vector<int>{4, 4});
  CHECK_FALSE(r.layers[0].params[2].quantizable);  // b_f
  CHECK(r.layers[0].params[3].name == "layer0.wx_b");
}

TEST_CASE("class_layout by rank") {
  const ClassLayout a = class_layout({4, 10});
  CHECK(a.outer == 4);
  CHECK(a.classes == 10);
  CHECK(a.inner == 1);
  const ClassLayout b = class_layout({2, 7, 5});
  CHECK(b.outer == 14);
  CHECK(b.classes == 5);
  const ClassLayout c = class_layout({2, 3, 4, 5});
  CHECK(c.outer == 2);
  CHECK(c.classes == 3);
  CHECK(c.inner == 20);
  CHECK(c.sites() == 40);
}

TEST_CASE("softmax rows are distributions and loss matches hand value") {
  ModelGraphT<double> m =
      build_model<double>({3}, {make_dense(3), make_softmax_output()});
  // Identity-ish weights so logits equal the input.
  auto& W = m.layers[0].params[0].value;
  for (int i = 0; i < 3; ++i) W.data[static_cast<size_t>(i * 3 + i)] = 1.0;
  TensorT<double> x({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  WorkspaceT<double> ws;
  const auto& probs = forward(m, x, ws);
  for (int r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) sum += probs.data[static_cast<size_t>(r * 3 + c)];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Row 2 is uniform; loss contribution -log(1/3).
  CHECK(probs.data[3] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  const double loss =
      kern::xent_loss_and_logit_grad<double>(probs, {2, 0}, nullptr);
  const double e = std::exp(1.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  const double expect = (-std::log(e * std::exp(2.0)) - std::log(1.0 / 3.0)) / 2.0;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gradcheck: every layer kind at rel error < 1e-4") {
  Rng rng(7001);
  for (auto& c : sqw_test::gradcheck_cases(7002)) {
    CAPTURE(c.name);
    const auto res = sqw_test::gradcheck_params(c.model, c.x, c.targets, rng, 12);
    CHECK(res.checked > 0);
    CHECK(res.max_rel < 1e-4);
  }
}

TEST_CASE("gradcheck: input gradients") {
  Rng rng(7003);
  for (auto& c : sqw_test::gradcheck_cases(7004)) {
    CAPTURE(c.name);
    const auto res = sqw_test::gradcheck_input(c.model, c.x, c.targets, rng, 10);
    CHECK(res.max_rel < 1e-4);
  }
}

namespace {

// One dense unit without bias interference: weight w, input 1, so pre-softmax
// behavior is irrelevant; we drive sgd_step directly with hand grads.
ModelGraph one_weight_model() {
  ModelGraph m = build_model<float>({1}, {make_dense(1)});
  m.layers[0].params[0].value.data[0] = 1.0f;
  return m;
}

Grads grad_of(const ModelGraph& m, float g) {
  Grads gr = zero_grads(m);
  gr[0][0].data[0] = g;
  return gr;
}

}  // namespace

TEST_CASE("sgd_step plain update") {
  ModelGraph m = one_weight_model();
  OptimizerState opt = make_optimizer(m, 0.1, 0.0, 0.0, 0.0);
  sgd_step(m, grad_of(m, 0.5f), opt);
  CHECK(m.layers[0].params[0].value.data[0] == 0.95f);
  CHECK(opt.step == 1);
  CHECK(opt.learning_rate == 0.1);
}

TEST_CASE("sgd_step momentum accumulates across steps") {
  ModelGraph m = one_weight_model();
  OptimizerState opt = make_optimizer(m, 0.1, 0.9, 0.0, 0.0);
  sgd_step(m, grad_of(m, 1.0f), opt);
  CHECK(m.layers[0].params[0].value.data[0] == doctest::Approx(0.9f));
  sgd_step(m, grad_of(m, 1.0f), opt);
  CHECK(m.layers[0].params[0].value.data[0] == doctest::Approx(0.71f));
  CHECK(opt.velocity[0][0].data[0] == doctest::Approx(1.9f));
}

TEST_CASE("sgd_step weight decay adds wd*w to the gradient") {
  ModelGraph m = one_weight_model();
  OptimizerState opt = make_optimizer(m, 0.1, 0.0, 0.01, 0.0);
  sgd_step(m, grad_of(m, 0.0f), opt);
  // v = 0 + 0 + 0.01*1; w = 1 - 0.1*0.01
  CHECK(m.layers[0].params[0].value.data[0] == doctest::Approx(0.999f));
}

TEST_CASE("sgd_step learning rate decay applies after the update") {
  ModelGraph m = one_weight_model();
  OptimizerState opt = make_optimizer(m, 0.1, 0.0, 0.0, 0.5);
  sgd_step(m, grad_of(m, 1.0f), opt);
  CHECK(m.layers[0].params[0].value.data[0] == doctest::Approx(0.9f));  // full lr used
  CHECK(opt.learning_rate == doctest::Approx(0.05));
  sgd_step(m, grad_of(m, 1.0f), opt);
  CHECK(m.layers[0].params[0].value.data[0] == doctest::Approx(0.85f));
}

TEST_CASE("sgd_step frozen weights stay put and drop their velocity") {
  ModelGraph m = one_weight_model();
  OptimizerState opt = make_optimizer(m, 0.1, 0.9, 0.0, 0.0);
  sgd_step(m, grad_of(m, 1.0f), opt);  // builds velocity
  FreezeMask freeze = empty_freeze_mask(m);
  freeze[0][0].assign(1, 1);
  sgd_step(m, grad_of(m, 1.0f), opt, &freeze);
  CHECK(m.layers[0].params[0].value.data[0] == doctest::Approx(0.9f));
  CHECK(opt.velocity[0][0].data[0] == 0.0f);
  CHECK(opt.step == 2);
  // Unfreezing resumes from zero velocity, not the stale one.
  sgd_step(m, grad_of(m, 1.0f), opt);
  CHECK(opt.velocity[0][0].data[0] == 1.0f);
}

TEST_CASE("make_optimizer validates the learning rate") {
  ModelGraph m = one_weight_model();
  CHECK_THROWS(make_optimizer(m, 0.0, 0.9, 0.0, 0.0));
  CHECK_THROWS(make_optimizer(m, -1.0, 0.9, 0.0, 0.0));
}

TEST_CASE("training is deterministic and reduces the loss") {
  ClsParams p;
  p.count = 96;
  p.image_size = 12;
  const Dataset ds = generate_cls(p, 11);

  auto run = [&] {
    ModelGraph m = build_model<float>(
        {1, 12, 12}, {make_conv2d(4, 3), make_relu(), make_maxpool2x2(), make_dense(8),
                      make_softmax_output()});
    Rng init(21);
    init_model(m, init);
    OptimizerState opt = make_optimizer(m, 1e-3, 0.9, 0.0, 0.0);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    Rng data(22);
    std::vector<double> losses;
    train_model(m, ds, cfg, opt, data, nullptr, &losses);
    return std::make_pair(m, losses);
  };

  auto [m1, losses1] = run();
  auto [m2, losses2] = run();
  REQUIRE(losses1.size() == 4);
  CHECK(losses1.back() < losses1.front());
  CHECK(losses1 == losses2);
  for (size_t li = 0; li < m1.layers.size(); ++li)
    for (size_t pi = 0; pi < m1.layers[li].params.size(); ++pi) {
      const auto& a = m1.layers[li].params[pi].value.data;
      const auto& b = m2.layers[li].params[pi].value.data;
      REQUIRE(a.size() == b.size());
      CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("site_predictions and accuracy_on agree") {
  // Rank-2 probabilities: argmax per row.
  Tensor probs({2, 3}, {0.2f, 0.5f, 0.3f, 0.9f, 0.05f, 0.05f});
  CHECK(site_predictions(probs) == std::vector<int32_t>{1, 0});
}

TEST_CASE("make_batch gathers rows and site targets") {
  Dataset ds;
  ds.inputs = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
  ds.labels = {0, 1, 2};
  ds.sites_per_sample = 1;
  ds.num_classes = 3;
  Tensor x;
  std::vector<int32_t> t;
  make_batch(ds, {2, 0}, x, t);
  CHECK(x.shape == std::vector<int>{2, 2});
  CHECK(x.data == std::vector<float>{5, 6, 1, 2});
  CHECK(t == std::vector<int32_t>{2, 0});
}
