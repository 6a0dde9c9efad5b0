#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>

#include "evstereo/adamw.hpp"
#include "evstereo/errors.hpp"
#include "evstereo/rng.hpp"
#include "evstereo/tape.hpp"
#include "evstereo/weights.hpp"

using namespace evstereo;

TEST_CASE("first step matches the closed form") {
  // w=1, g=1, wd=0: m_hat=1, v_hat=1, so w' = 1 - lr / (1 + eps).
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  std::map<std::string, Tensor> params{{"w", Tensor::full({1}, 1.0)}};
  std::map<std::string, Tensor> grads{{"w", Tensor::full({1}, 1.0)}};
  AdamWState st;
  adamw_step(params, grads, st, cfg);
  double expect = 1.0 - cfg.lr / (1.0 + cfg.eps);
  CHECK(params.at("w")[0] == doctest::Approx(expect).epsilon(1e-15));
  CHECK(st.step == 1);
}

TEST_CASE("zero gradient leaves only the decay factor, exactly") {
  AdamWConfig cfg;
  std::map<std::string, Tensor> params{{"w", Tensor::from_data({3}, {2.0, -4.0, 0.5})}};
  std::map<std::string, Tensor> grads{{"w", Tensor::zeros({3})}};
  AdamWState st;
  adamw_step(params, grads, st, cfg);
  double decay = 1.0 - cfg.lr * cfg.weight_decay;
  CHECK(params.at("w")[0] == 2.0 * decay);
  CHECK(params.at("w")[1] == -4.0 * decay);
  CHECK(params.at("w")[2] == 0.5 * decay);

  // missing gradient entry behaves like a zero gradient
  std::map<std::string, Tensor> params2{{"w", Tensor::from_data({1}, {2.0})}};
  std::map<std::string, Tensor> none;
  AdamWState st2;
  adamw_step(params2, none, st2, cfg);
  CHECK(params2.at("w")[0] == 2.0 * decay);
}

TEST_CASE("two steps track a hand-rolled reference") {
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  std::map<std::string, Tensor> params{{"w", Tensor::full({1}, 3.0)}};
  AdamWState st;

  double w = 3.0, m = 0.0, v = 0.0;
  for (int step = 1; step <= 2; ++step) {
    double g = 2.0 * w;  // gradient of w^2
    std::map<std::string, Tensor> grads{{"w", Tensor::full({1}, 2.0 * params.at("w")[0])}};
    adamw_step(params, grads, st, cfg);

    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    double mh = m / (1.0 - std::pow(cfg.beta1, step));
    double vh = v / (1.0 - std::pow(cfg.beta2, step));
    w = w * (1.0 - cfg.lr * cfg.weight_decay) - cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    CHECK(params.at("w")[0] == doctest::Approx(w).epsilon(1e-15));
  }
}

TEST_CASE("descends a quadratic bowl") {
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  std::map<std::string, Tensor> params{{"w", Tensor::from_data({2}, {4.0, -3.0})}};
  AdamWState st;
  for (int i = 0; i < 400; ++i) {
    std::map<std::string, Tensor> grads{
        {"w", Tensor::from_data({2}, {2.0 * params.at("w")[0], 2.0 * params.at("w")[1]})}};
    adamw_step(params, grads, st, cfg);
  }
  CHECK(std::abs(params.at("w")[0]) < 1e-2);
  CHECK(std::abs(params.at("w")[1]) < 1e-2);
}

TEST_CASE("optimizing through the tape reduces a small regression loss") {
  DetRng rng(21);
  Tensor w0({3, 3});
  for (int64_t i = 0; i < 9; ++i) w0[i] = rng.uniform(-0.5, 0.5);
  Tensor x(std::vector<int64_t>{3, 4});
  for (int64_t i = 0; i < 12; ++i) x[i] = rng.uniform(-1.0, 1.0);
  // target realizable by some w so the loss can approach zero
  Tensor w_true({3, 3});
  for (int64_t i = 0; i < 9; ++i) w_true[i] = rng.uniform(-1.0, 1.0);
  Tensor target(std::vector<int64_t>{3, 4});
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (int64_t k = 0; k < 3; ++k) acc += w_true.at({r, k}) * x.at({k, c});
      target.at({r, c}) = acc;
    }

  std::map<std::string, Tensor> params{{"w", w0}};
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  AdamWState st;

  auto loss_of = [&](const Tensor& w, Tensor* grad) {
    Tensor wg = w;
    wg.requires_grad = grad != nullptr;
    Tape t;
    Val vw = t.input(wg);
    Val pred = t.matmul(vw, t.constant(x));
    Val diff = t.sub(pred, t.constant(target));
    Val loss = t.sum_all(t.mul(diff, diff));
    if (grad) {
      t.backward(loss);
      *grad = t.grad(vw);
    }
    return t.value(loss)[0];
  };

  double first = loss_of(params.at("w"), nullptr);
  for (int i = 0; i < 200; ++i) {
    Tensor g(std::vector<int64_t>{3, 3});
    loss_of(params.at("w"), &g);
    std::map<std::string, Tensor> grads{{"w", g}};
    adamw_step(params, grads, st, cfg);
  }
  double last = loss_of(params.at("w"), nullptr);
  CHECK(last < 0.05 * first);
}

TEST_CASE("weight directory round trip preserves bits and config") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "evstereo_weights_test";
  fs::remove_all(dir);

  DetRng rng(22);
  std::map<std::string, Tensor> tensors;
  Tensor a(std::vector<int64_t>{2, 3});
  for (int64_t i = 0; i < 6; ++i) a[i] = rng.uniform(-10.0, 10.0);
  a[0] = 0.1 + 0.2;  // value without short exact decimal form
  tensors["backbone.conv1.w"] = a;
  tensors["head.bias"] = Tensor::from_data({2}, {-0.0, 1e-300});

  nlohmann::json cfg;
  cfg["feature_channels"] = 16;
  save_weight_dir(dir.string(), tensors, cfg);

  WeightDir loaded = load_weight_dir(dir.string());
  CHECK(loaded.config["feature_channels"] == 16);
  REQUIRE(loaded.tensors.count("backbone.conv1.w") == 1);
  REQUIRE(loaded.tensors.count("head.bias") == 1);
  const Tensor& la = loaded.tensors.at("backbone.conv1.w");
  CHECK(la.shape() == std::vector<int64_t>{2, 3});
  for (int64_t i = 0; i < 6; ++i) CHECK(la[i] == a[i]);
  CHECK(std::signbit(loaded.tensors.at("head.bias")[0]));
  CHECK(loaded.tensors.at("head.bias")[1] == 1e-300);

  CHECK_THROWS_AS(load_weight_dir((dir / "missing").string()), IoError);
  fs::remove_all(dir);
}
