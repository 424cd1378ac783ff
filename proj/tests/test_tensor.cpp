#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "poselift/adam.hpp"
#include "poselift/gradcheck.hpp"
#include "poselift/nn.hpp"
#include "poselift/tensor.hpp"

using namespace poselift;

namespace {

Mat<double> random_mat(int r, int c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Mat<double> m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = d(rng);
  return m;
}

}  // namespace

TEST_CASE("leaky relu matches its piecewise definition") {
  Tape<double> t;
  Mat<double> x(1, 2);
  x << -1.0, 2.0;
  Val<double> v = t.leaf(x);
  Val<double> y = t.leaky_relu(v, 0.01);
  CHECK(t.value(y)(0, 0) == Catch::Approx(-0.01));
  CHECK(t.value(y)(0, 1) == Catch::Approx(2.0));
  t.backward(t.sum(y));
  CHECK(t.grad(v)(0, 0) == Catch::Approx(0.01));
  CHECK(t.grad(v)(0, 1) == Catch::Approx(1.0));
}

TEST_CASE("clamp_min clamps and kills gradient in the clamped region") {
  Tape<double> t;
  Mat<double> x(1, 1);
  x << 0.5;
  Val<double> v = t.leaf(x);
  Val<double> y = t.clamp_min(v, 1.0);
  CHECK(t.value(y)(0, 0) == 1.0);
  t.backward(t.sum(y));
  CHECK(t.grad(v)(0, 0) == 0.0);
}

TEST_CASE("d/dx of x*x at x=3 is 6") {
  Tape<double> t;
  Mat<double> x(1, 1);
  x << 3.0;
  Val<double> v = t.leaf(x);
  t.backward(t.mul(v, v));
  CHECK(t.grad(v)(0, 0) == Catch::Approx(6.0));
}

TEST_CASE("shape mismatch errors name both shapes") {
  Tape<double> t;
  Val<double> a = t.leaf(Mat<double>::Zero(2, 3));
  Val<double> b = t.leaf(Mat<double>::Zero(3, 4));
  CHECK_THROWS_WITH(t.add(a, b), Catch::Matchers::ContainsSubstring("[2x3]") &&
                                     Catch::Matchers::ContainsSubstring("[3x4]"));
  CHECK_THROWS_AS(t.matmul(b, a), ShapeError);
}

TEST_CASE("forward evaluation is pure") {
  std::mt19937_64 rng(7);
  Mat<double> x = random_mat(4, 5, rng);
  Mat<double> w = random_mat(5, 3, rng);
  Mat<double> first, second;
  for (int rep = 0; rep < 2; ++rep) {
    Tape<double> t;
    Val<double> y = t.leaky_relu(t.matmul(t.leaf(x), t.leaf(w)));
    (rep == 0 ? first : second) = t.value(y);
  }
  CHECK(first == second);
}

TEST_CASE("gradient check passes for every differentiable op") {
  std::mt19937_64 rng(42);
  using Build = std::function<Val<double>(Tape<double>&, const std::vector<Val<double>>&)>;
  auto check1 = [&](const Build& b, Mat<double> x, double tol = 1e-7) {
    double err = grad_check<double>(b, {std::move(x)}, 1e-5);
    CHECK(err < tol);
  };
  Mat<double> pos = random_mat(3, 4, rng, 0.5, 2.0);
  Mat<double> any = random_mat(3, 4, rng);

  check1([](auto& t, auto& v) { return t.sum(t.exp(v[0])); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.log(v[0])); }, pos);
  check1([](auto& t, auto& v) { return t.sum(t.sqrt(v[0])); }, pos);
  check1([](auto& t, auto& v) { return t.sum(t.square(v[0])); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.tanh(v[0])); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.sin(v[0])); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.cos(v[0])); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.abs(v[0])); }, pos);
  check1([](auto& t, auto& v) { return t.sum(t.neg(v[0])); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.scale(v[0], 2.5)); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.relu(v[0])); }, pos);
  check1([](auto& t, auto& v) { return t.sum(t.leaky_relu(v[0], 0.01)); }, pos);
  check1([](auto& t, auto& v) { return t.sum(t.clamp_min(v[0], 1.0)); }, pos);
  check1([](auto& t, auto& v) { return t.mean(t.square(v[0])); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.square(t.row_sum(v[0]))); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.square(t.row_mean(v[0]))); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.square(t.col_sum(v[0]))); }, any);
  check1([](auto& t, auto& v) { return t.sum(t.square(t.col_mean(v[0]))); }, any);
  check1([](auto& t, auto& v) { return l2_norm(t, v[0]); }, pos);
  check1([](auto& t, auto& v) { return l1_norm(t, v[0]); }, pos);
  check1([](auto& t, auto& v) { return t.sum(t.square(t.slice_cols(v[0], 1, 2))); }, any);
  check1([](auto& t, auto& v) {
    return t.sum(t.square(t.gather_cols(v[0], {0, 2, 2, 3})));
  }, any);
  check1([](auto& t, auto& v) {
    return t.sum(t.square(t.concat_cols({t.slice_cols(v[0], 0, 2), v[0]})));
  }, any);

  // binary ops, including broadcasting
  auto check2 = [&](const Build& b, Mat<double> x, Mat<double> y) {
    double err = grad_check<double>(b, {std::move(x), std::move(y)}, 1e-5);
    CHECK(err < 1e-7);
  };
  check2([](auto& t, auto& v) { return t.sum(t.add(v[0], v[1])); }, any, pos);
  check2([](auto& t, auto& v) { return t.sum(t.sub(v[0], v[1])); }, any, pos);
  check2([](auto& t, auto& v) { return t.sum(t.mul(v[0], v[1])); }, any, pos);
  check2([](auto& t, auto& v) { return t.sum(t.div(v[0], v[1])); }, any, pos);
  check2([](auto& t, auto& v) { return t.sum(t.square(t.matmul(v[0], v[1]))); },
         random_mat(3, 4, rng), random_mat(4, 2, rng));
  check2([](auto& t, auto& v) { return t.sum(t.mul(v[0], v[1])); },
         random_mat(3, 4, rng), random_mat(3, 1, rng));
  check2([](auto& t, auto& v) { return t.sum(t.mul(v[0], v[1])); },
         random_mat(3, 4, rng), random_mat(1, 4, rng));
  check2([](auto& t, auto& v) { return t.sum(t.div(v[0], v[1])); },
         random_mat(3, 4, rng), random_mat(1, 1, rng, 0.5, 2.0));
  check2([](auto& t, auto& v) { return t.sum(t.add(v[0], v[1])); },
         random_mat(3, 4, rng), random_mat(1, 1, rng));
}

TEST_CASE("grad_check on constant function returns zero gradients") {
  Tape<double> t;
  Val<double> v = t.leaf(Mat<double>::Ones(2, 2));
  Val<double> c = t.constant(Mat<double>::Ones(1, 1) * 5.0);
  t.backward(t.sum(t.mul(c, t.scale(v, 0.0))));
  CHECK(t.grad(v).isZero());
}

TEST_CASE("detach blocks gradient flow") {
  Tape<double> t;
  Val<double> v = t.leaf(Mat<double>::Ones(1, 1) * 2.0);
  Val<double> y = t.mul(v, t.detach(v));  // d/dv = detach(v) = 2, not 2v = 4
  t.backward(y);
  CHECK(t.grad(v)(0, 0) == Catch::Approx(2.0));
}

TEST_CASE("adam: zero gradient and zero weight decay leave parameters unchanged") {
  std::mt19937_64 rng(3);
  Linear<double> lin("l", 3, 2, rng);
  Mat<double> before = lin.W.value;
  Tape<double> t;
  Bindings<double> bs;
  Val<double> out = lin.apply(t, &bs, t.constant(Mat<double>::Zero(1, 3)));
  t.backward(t.sum(t.scale(out, 0.0)));
  AdamState<double> state;
  AdamConfig<double> cfg;
  cfg.lr = 0.1;
  adam_step(t, bs, state, cfg);
  CHECK(lin.W.value == before);
}

TEST_CASE("adam: descent direction on f(x)=x^2") {
  Param<double> p{"x", Mat<double>::Ones(1, 1)};
  AdamState<double> state;
  AdamConfig<double> cfg;
  cfg.lr = 0.1;
  Tape<double> t;
  Bindings<double> bs;
  Val<double> x = bind(t, &bs, p);
  t.backward(t.mul(x, x));
  adam_step(t, bs, state, cfg);
  CHECK(p.value(0, 0) < 1.0);
}

TEST_CASE("adam: 200 steps reach the minimum of a 2-var quadratic") {
  // f(x) = (x0 - 1.5)^2 + 3 (x1 + 0.5)^2, minimum at (1.5, -0.5)
  Param<double> p{"x", Mat<double>::Zero(1, 2)};
  AdamState<double> state;
  AdamConfig<double> cfg;
  cfg.lr = 0.05;
  for (int i = 0; i < 200; ++i) {
    Tape<double> t;
    Bindings<double> bs;
    Val<double> x = bind(t, &bs, p);
    Mat<double> target(1, 2);
    target << 1.5, -0.5;
    Mat<double> weight(1, 2);
    weight << 1.0, 3.0;
    Val<double> d = t.sub(x, t.constant(target));
    t.backward(t.sum(t.mul(t.constant(weight), t.square(d))));
    adam_step(t, bs, state, cfg);
  }
  CHECK(std::abs(p.value(0, 0) - 1.5) < 1e-3);
  CHECK(std::abs(p.value(0, 1) + 0.5) < 1e-3);
}

TEST_CASE("adam: non-finite gradient aborts naming the parameter") {
  Param<double> p{"weights.W", Mat<double>::Ones(1, 1)};
  Tape<double> t;
  Bindings<double> bs;
  Val<double> x = bind(t, &bs, p);
  Val<double> y = t.log(t.scale(x, 0.0));  // log(0) -> -inf, grad inf
  t.backward(y);
  AdamState<double> state;
  CHECK_THROWS_WITH(adam_step(t, bs, state, AdamConfig<double>{}),
                    Catch::Matchers::ContainsSubstring("weights.W"));
}

TEST_CASE("grad_check tolerances: sum of squares in both precisions") {
  std::mt19937_64 rng(11);
  Mat<double> x64 = random_mat(2, 5, rng);
  double err64 = grad_check<double>(
      [](auto& t, auto& v) { return t.sum(t.square(v[0])); }, {x64}, 1e-5);
  CHECK(err64 < 1e-7);

  Mat<float> x32 = x64.cast<float>();
  float err32 = grad_check<float>(
      [](auto& t, auto& v) { return t.sum(t.square(v[0])); }, {x32}, 1e-2f);
  CHECK(err32 < 1e-4f);
}

TEST_CASE("deterministic forward+backward across reruns") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Linear<float> l1("l1", 6, 16, rng);
    Linear<float> l2("l2", 16, 1, rng);
    Mat<float> x(4, 6);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 4; ++i) x(i, j) = float(d(rng));
    Tape<float> t;
    Bindings<float> bs;
    Val<float> h = t.leaky_relu(l1.apply(t, &bs, t.constant(x)));
    Val<float> loss = t.mean(t.square(l2.apply(t, &bs, h)));
    t.backward(loss);
    return std::make_pair(t.value(loss)(0, 0), Mat<float>(t.grad(bs[0].node)));
  };
  auto [la, ga] = run();
  auto [lb, gb] = run();
  CHECK(la == lb);
  CHECK(ga == gb);
}

TEST_CASE("parameters bound twice in one graph get summed gradients") {
  Param<double> p{"w", Mat<double>::Constant(1, 1, 3.0)};
  Tape<double> t;
  Bindings<double> bs;
  Val<double> a = bind(t, &bs, p);
  Val<double> b = bind(t, &bs, p);
  // loss = a^2 + 2*b => d/dw = 2w + 2 = 8
  t.backward(t.add(t.square(a), t.scale(b, 2.0)));
  REQUIRE(bs.size() == 2);
  auto grads = coalesce_grads(t, bs);
  REQUIRE(grads.size() == 1);
  CHECK(grads[0].second(0, 0) == Catch::Approx(8.0));

  // adam applies exactly one update using the summed gradient
  AdamState<double> st;
  AdamConfig<double> cfg;
  cfg.lr = 0.1;
  adam_step(t, bs, st, cfg);
  // first step moves by ~lr in the gradient direction
  CHECK(p.value(0, 0) == Catch::Approx(3.0 - 0.1).epsilon(1e-6));
}
