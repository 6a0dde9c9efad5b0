#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "evstereo/errors.hpp"
#include "evstereo/gradcheck.hpp"
#include "evstereo/rng.hpp"
#include "evstereo/tape.hpp"

using namespace evstereo;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, DetRng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Scalar readout with distinct random weights so every output element carries
// gradient signal.
Val weighted_readout(Tape& t, Val y, uint64_t seed) {
  DetRng rng(seed, 99);
  Val w = t.constant(random_tensor(t.value(y).shape(), rng, 0.1, 1.0));
  return t.sum_all(t.mul(y, w));
}

// Checks d(readout)/d(x) for the op built by `build` against central
// differences. Returns max rel error.
double check_grad(const std::function<Val(Tape&, Val)>& build, const Tensor& x,
                  uint64_t readout_seed = 7, double step = 1e-6) {
  Tensor xg = x;
  xg.requires_grad = true;
  Tape tape;
  Val vx = tape.input(xg);
  Val y = build(tape, vx);
  Val r = weighted_readout(tape, y, readout_seed);
  tape.backward(r);
  Tensor analytic = tape.grad(vx);

  auto f = [&](const Tensor& probe) {
    Tape t2;
    Val px = t2.input(probe);
    Val py = build(t2, px);
    Val pr = weighted_readout(t2, py, readout_seed);
    return t2.value(pr)[0];
  };
  return finite_difference_check(f, x, analytic, step).max_rel_err;
}

}  // namespace

TEST_CASE("elementwise forward semantics") {
  Tape t;
  Val a = t.input(Tensor::from_data({3}, {1.0, -2.0, 3.0}));
  Val b = t.input(Tensor::from_data({3}, {0.5, 4.0, -1.0}));
  CHECK(t.value(t.add(a, b))[1] == 2.0);
  CHECK(t.value(t.sub(a, b))[0] == 0.5);
  CHECK(t.value(t.mul(a, b))[2] == -3.0);
  CHECK(t.value(t.scalar_mul(a, -2.0))[0] == -2.0);
  CHECK(t.value(t.relu(a))[1] == 0.0);
  CHECK(t.value(t.relu(a))[2] == 3.0);
  CHECK(t.value(t.sigmoid(t.constant(Tensor::scalar(0.0))))[0] == doctest::Approx(0.5));
  CHECK(t.value(t.exp(t.constant(Tensor::scalar(1.0))))[0] == doctest::Approx(std::exp(1.0)));

  Val c = t.input(Tensor::zeros({2, 2}));
  CHECK_THROWS_AS(t.add(a, c), ContractError);
  CHECK_THROWS_AS(t.log(t.constant(Tensor::scalar(-1.0))), ContractError);
  CHECK_THROWS_AS(t.reciprocal(t.constant(Tensor::scalar(0.0))), ContractError);
}

TEST_CASE("matmul forward") {
  Tape t;
  Val a = t.input(Tensor::from_data({2, 2}, {1, 2, 3, 4}));
  Val b = t.input(Tensor::from_data({2, 2}, {5, 6, 7, 8}));
  Tensor c = t.value(t.matmul(a, b));
  CHECK(c[0] == 19.0);
  CHECK(c[1] == 22.0);
  CHECK(c[2] == 43.0);
  CHECK(c[3] == 50.0);
  Val bad = t.input(Tensor::zeros({3, 2}));
  CHECK_THROWS_AS(t.matmul(a, bad), ContractError);
}

TEST_CASE("conv2d identity kernel and shape contract") {
  Tape t;
  DetRng rng(3);
  Tensor x = random_tensor({2, 4, 5}, rng);
  // 1x1 delta kernel copying channel 0 and channel 1
  Tensor w = Tensor::zeros({2, 2, 1, 1});
  w.at({0, 0, 0, 0}) = 1.0;
  w.at({1, 1, 0, 0}) = 1.0;
  Val y = t.conv2d(t.input(x), t.input(w), t.input(Tensor::zeros({2})), {1, 1}, {0, 0});
  const Tensor& yv = t.value(y);
  CHECK(yv.same_shape(x));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(yv[i] == x[i]);

  // stride-2 output extents
  Val y2 = t.conv2d(t.input(random_tensor({1, 6, 7}, rng)),
                    t.input(random_tensor({3, 1, 3, 3}, rng)), t.input(Tensor::zeros({3})), {2, 2},
                    {1, 1});
  CHECK(t.value(y2).shape() == std::vector<int64_t>{3, 3, 4});

  CHECK_THROWS_AS(
      t.conv2d(t.input(Tensor::zeros({2, 4, 4})), t.input(Tensor::zeros({1, 3, 3, 3})),
               t.input(Tensor::zeros({1})), {1, 1}, {1, 1}),
      ContractError);
}

TEST_CASE("softmax normalizes and is shift invariant") {
  Tape t;
  DetRng rng(5);
  Tensor x = random_tensor({3, 6, 2}, rng, -5.0, 5.0);
  Val p = t.softmax(t.input(x), 1);
  Val s = t.sum(p, 1);
  const Tensor& sv = t.value(s);
  for (int64_t i = 0; i < sv.numel(); ++i) CHECK(std::abs(sv[i] - 1.0) < 1e-12);

  // constant input -> uniform distribution
  Val u = t.softmax(t.constant(Tensor::full({4}, 2.5)), 0);
  for (int64_t i = 0; i < 4; ++i) CHECK(t.value(u)[i] == doctest::Approx(0.25).epsilon(1e-12));

  // large logits stay finite
  Val big = t.softmax(t.constant(Tensor::from_data({2}, {1e4, -1e4})), 0);
  CHECK(std::isfinite(t.value(big)[0]));
  CHECK(t.value(big)[0] == doctest::Approx(1.0));
}

TEST_CASE("slice concat round trip and transpose reshape broadcast") {
  Tape t;
  DetRng rng(6);
  Tensor x = random_tensor({2, 5, 3}, rng);
  Val v = t.input(x);
  Val left = t.slice(v, {0, 0, 0}, {2, 2, 3});
  Val right = t.slice(v, {0, 2, 0}, {2, 3, 3});
  Val back = t.concat({left, right}, 1);
  const Tensor& bv = t.value(back);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(bv[i] == x[i]);

  Val tr = t.transpose(v, {2, 0, 1});
  CHECK(t.value(tr).shape() == std::vector<int64_t>{3, 2, 5});
  CHECK(t.value(tr).at({1, 0, 4}) == x.at({0, 4, 1}));

  Val rs = t.reshape(v, {5, 6});
  CHECK(t.value(rs).shape() == std::vector<int64_t>{5, 6});
  CHECK(t.value(rs)[7] == x[7]);

  Val nar = t.input(Tensor::from_data({2, 1}, {3.0, 4.0}));
  Val wide = t.broadcast_to(nar, {2, 3});
  CHECK(t.value(wide).at({0, 2}) == 3.0);
  CHECK(t.value(wide).at({1, 0}) == 4.0);
  CHECK_THROWS_AS(t.broadcast_to(nar, {3, 3}), ContractError);
}

TEST_CASE("bilinear sampling: integer coords gather exactly, outside is zero") {
  Tape t;
  DetRng rng(8);
  Tensor img = random_tensor({2, 4, 6}, rng);
  Tensor coords = Tensor::zeros({2, 3});
  coords.at({0, 0}) = 2.0;   // u
  coords.at({1, 0}) = 1.0;   // v
  coords.at({0, 1}) = -5.0;  // outside
  coords.at({1, 1}) = 0.0;
  coords.at({0, 2}) = 2.5;  // midpoint between u=2 and u=3 on row 0
  coords.at({1, 2}) = 0.0;
  Val y = t.bilinear_sample_2d(t.input(img), t.constant(coords));
  const Tensor& yv = t.value(y);
  CHECK(yv.at({0, 0}) == img.at({0, 1, 2}));
  CHECK(yv.at({1, 0}) == img.at({1, 1, 2}));
  CHECK(yv.at({0, 1}) == 0.0);
  CHECK(yv.at({0, 2}) == doctest::Approx(0.5 * (img.at({0, 0, 2}) + img.at({0, 0, 3}))));
}

TEST_CASE("max_pool_region picks maxima and zeros empty regions") {
  Tape t;
  Tensor g = Tensor::from_data({1, 2, 3}, {1.0, 5.0, 2.0, -1.0, 0.5, 4.0});
  Val y = t.max_pool_region(t.input(g), {{0, 1, 2}, {}, {3, 5}});
  CHECK(t.value(y).shape() == std::vector<int64_t>{3, 1});
  CHECK(t.value(y).at({0, 0}) == 5.0);
  CHECK(t.value(y).at({1, 0}) == 0.0);
  CHECK(t.value(y).at({2, 0}) == 4.0);
  CHECK_THROWS_AS(t.max_pool_region(t.input(g), {{6}}), ContractError);
}

TEST_CASE("gradients: elementwise and scalar ops") {
  DetRng rng(11);
  auto away_from_zero = [&](std::vector<int64_t> s) {
    Tensor x = random_tensor(std::move(s), rng, 0.2, 1.5);
    for (int64_t i = 0; i < x.numel(); ++i)
      if (rng.uniform() < 0.5) x[i] = -x[i];
    return x;
  };

  Tensor x = away_from_zero({2, 3, 4});
  Tensor y = away_from_zero({2, 3, 4});

  CHECK(check_grad([&](Tape& t, Val v) { return t.add(v, t.constant(y)); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.sub(t.constant(y), v); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.mul(v, t.constant(y)); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.scalar_mul(v, -1.7); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.relu(v); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.sigmoid(v); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.tanh(v); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.exp(v); }, x) < 1e-5);

  Tensor pos = random_tensor({3, 3}, rng, 0.3, 2.0);
  CHECK(check_grad([&](Tape& t, Val v) { return t.log(v); }, pos) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.reciprocal(v); }, pos) < 1e-5);
}

TEST_CASE("gradients: matmul both sides") {
  DetRng rng(12);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  CHECK(check_grad([&](Tape& t, Val v) { return t.matmul(v, t.constant(b)); }, a) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.matmul(t.constant(a), v); }, b) < 1e-5);
}

TEST_CASE("gradients: conv2d and conv3d all inputs") {
  DetRng rng(13);
  Tensor x = random_tensor({2, 5, 6}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  auto c2 = [&](Tape& t, Val vx, Val vw, Val vb) {
    return t.conv2d(vx, vw, vb, {2, 1}, {1, 1});
  };
  CHECK(check_grad([&](Tape& t, Val v) { return c2(t, v, t.constant(w), t.constant(b)); }, x) <
        1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return c2(t, t.constant(x), v, t.constant(b)); }, w) <
        1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return c2(t, t.constant(x), t.constant(w), v); }, b) <
        1e-5);

  Tensor x3 = random_tensor({2, 4, 5, 3}, rng);
  Tensor w3 = random_tensor({2, 2, 3, 3, 2}, rng);
  Tensor b3 = random_tensor({2}, rng);
  auto c3 = [&](Tape& t, Val vx, Val vw, Val vb) {
    return t.conv3d(vx, vw, vb, {1, 2, 1}, {1, 0, 1});
  };
  CHECK(check_grad([&](Tape& t, Val v) { return c3(t, v, t.constant(w3), t.constant(b3)); }, x3) <
        1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return c3(t, t.constant(x3), v, t.constant(b3)); }, w3) <
        1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return c3(t, t.constant(x3), t.constant(w3), v); }, b3) <
        1e-5);
}

TEST_CASE("gradients: reductions, softmax, layout ops") {
  DetRng rng(14);
  Tensor x = random_tensor({3, 4, 2}, rng, -2.0, 2.0);
  CHECK(check_grad([&](Tape& t, Val v) { return t.softmax(v, 1); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.sum(v, 0); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.mean(v, 2); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.slice(v, {1, 0, 1}, {2, 3, 1}); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.transpose(v, {2, 0, 1}); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.reshape(v, {4, 6}); }, x) < 1e-5);

  Tensor nar = random_tensor({3, 1, 2}, rng);
  CHECK(check_grad([&](Tape& t, Val v) { return t.broadcast_to(v, {3, 4, 2}); }, nar) < 1e-5);

  Tensor other = random_tensor({3, 4, 2}, rng);
  CHECK(check_grad([&](Tape& t, Val v) { return t.concat({v, t.constant(other)}, 1); }, x) < 1e-5);
  CHECK(check_grad([&](Tape& t, Val v) { return t.concat({t.constant(other), v}, 2); }, x) < 1e-5);
}

TEST_CASE("gradients: samplers and region pooling") {
  DetRng rng(15);
  Tensor img = random_tensor({2, 6, 7}, rng);
  Tensor coords = Tensor::zeros({2, 9});
  for (int64_t i = 0; i < 9; ++i) {
    coords.at({0, i}) = rng.uniform(-1.5, 7.5);
    coords.at({1, i}) = rng.uniform(-1.5, 6.5);
  }
  CHECK(check_grad(
            [&](Tape& t, Val v) { return t.bilinear_sample_2d(v, t.constant(coords)); }, img) <
        1e-5);

  Tensor vol = random_tensor({2, 4, 5, 6}, rng);
  Tensor c3 = Tensor::zeros({3, 8});
  for (int64_t i = 0; i < 8; ++i) {
    c3.at({0, i}) = rng.uniform(-1.0, 6.5);
    c3.at({1, i}) = rng.uniform(-1.0, 5.5);
    c3.at({2, i}) = rng.uniform(-1.0, 4.5);
  }
  CHECK(check_grad(
            [&](Tape& t, Val v) { return t.trilinear_sample_3d(v, t.constant(c3)); }, vol) < 1e-5);

  // well-separated values so the finite-difference step cannot flip the argmax
  Tensor grid({2, 3, 4});
  for (int64_t i = 0; i < grid.numel(); ++i) grid[i] = 0.01 * double(i * 7 % 24);
  std::vector<std::vector<int64_t>> regions{{0, 5, 11}, {2, 3}, {}, {1, 6, 7, 10}};
  CHECK(check_grad([&](Tape& t, Val v) { return t.max_pool_region(v, regions); }, grid) < 1e-5);
}

TEST_CASE("backward engine contracts") {
  Tape t;
  Tensor x = Tensor::from_data({2}, {1.0, 2.0});
  x.requires_grad = true;
  Val v = t.input(x);
  Val y = t.add(v, v);  // same node used twice accumulates
  Val s = t.sum(y, 0);
  t.backward(s);
  CHECK(t.grad(v)[0] == 2.0);
  CHECK(t.grad(v)[1] == 2.0);

  // backward on a non-scalar is a contract violation
  CHECK_THROWS_AS(t.backward(y), ContractError);

  // second backward resets accumulators instead of doubling
  t.backward(s);
  CHECK(t.grad(v)[0] == 2.0);

  // unused input reads back zero gradient
  Tensor u = Tensor::from_data({3}, {1, 2, 3});
  u.requires_grad = true;
  Val unused = t.input(u);
  t.backward(s);
  Tensor gu = t.grad(unused);
  for (int64_t i = 0; i < 3; ++i) CHECK(gu[i] == 0.0);

  // a root with no differentiable ancestry is rejected
  Tape t2;
  Val c = t2.constant(Tensor::scalar(1.0));
  CHECK_THROWS_AS(t2.backward(c), ContractError);
}

TEST_CASE("generic apply matches named wrappers") {
  Tape t;
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Val v = t.input(x);
  OpAttrs at;
  at.scalar = 3.0;
  Val a = t.apply(Op::scalar_mul, {v}, at);
  Val b = t.scalar_mul(v, 3.0);
  for (int64_t i = 0; i < 4; ++i) CHECK(t.value(a)[i] == t.value(b)[i]);
  CHECK(op_from_name("conv2d").has_value());
  CHECK(std::string(op_name(Op::trilinear_sample_3d)) == "trilinear_sample_3d");
}

TEST_CASE("fault injection corrupts exactly the targeted op's backward") {
  DetRng rng(16);
  Tensor x = random_tensor({3, 3}, rng, 0.3, 1.0);
  Tensor y = random_tensor({3, 3}, rng, 0.3, 1.0);

  auto grads_with_fault = [&](bool inject) {
    Tensor xg = x;
    xg.requires_grad = true;
    Tape t;
    if (inject) t.set_backward_fault(Op::mul, 1.5);
    Val v = t.input(xg);
    Val m = t.mul(v, t.constant(y));
    Val a = t.add(m, t.constant(y));
    Val s = t.sum_all(a);
    t.backward(s);
    return t.grad(v);
  };

  Tensor clean = grads_with_fault(false);
  Tensor dirty = grads_with_fault(true);
  for (int64_t i = 0; i < clean.numel(); ++i)
    CHECK(dirty[i] == doctest::Approx(1.5 * clean[i]).epsilon(1e-12));
}

TEST_CASE("identical graphs produce bit-identical values and gradients") {
  DetRng rng(17);
  Tensor x = random_tensor({2, 4, 4}, rng);
  Tensor w = random_tensor({2, 2, 3, 3}, rng);

  auto run = [&]() {
    Tensor xg = x;
    xg.requires_grad = true;
    Tape t;
    Val v = t.input(xg);
    Val y = t.conv2d(v, t.constant(w), t.constant(Tensor::zeros({2})), {1, 1}, {1, 1});
    Val p = t.softmax(y, 0);
    Val s = t.sum_all(p);
    t.backward(s);
    return std::pair<Tensor, Tensor>(t.value(p), t.grad(v));
  };

  auto [v1, g1] = run();
  auto [v2, g2] = run();
  for (int64_t i = 0; i < v1.numel(); ++i) CHECK(v1[i] == v2[i]);
  for (int64_t i = 0; i < g1.numel(); ++i) CHECK(g1[i] == g2[i]);
}
