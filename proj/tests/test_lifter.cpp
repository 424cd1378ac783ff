#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "poselift/gradcheck.hpp"
#include "poselift/lifter.hpp"

using namespace poselift;

namespace {

template <class S>
Mat<S> random_mat(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0, scale);
  Mat<S> m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = S(d(rng));
  return m;
}

// Perturb the zero-initialized output heads so the net is non-trivial.
template <class S>
void randomize_heads(LifterNet<S>& net, std::mt19937_64& rng, double scale) {
  net.depth_out.W.value = random_mat<S>(int(net.depth_out.W.value.rows()),
                                        int(net.depth_out.W.value.cols()), rng, scale);
  net.elev_out.W.value = random_mat<S>(int(net.elev_out.W.value.rows()),
                                       int(net.elev_out.W.value.cols()), rng, scale);
}

}  // namespace

TEST_CASE("freshly initialized lifter predicts the flat pose at depth D") {
  std::mt19937_64 rng(1);
  LifterNet<double> net(5, 16, rng);
  Mat<double> x = random_mat<double>(3, 10, rng);
  Tape<double> t;
  LiftGraph<double> l = lift(t, nullptr, net, t.constant(x), 10.0);
  CHECK(t.value(l.d).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(t.value(l.e).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((t.value(l.w).array() - 10.0).abs().maxCoeff() == 0.0);
  // y = [10u, 10v, 10]
  CHECK((t.value(l.y).leftCols(5) - 10.0 * x.leftCols(5)).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((t.value(l.y).rightCols(5).array() - 10.0).abs().maxCoeff() == 0.0);
}

TEST_CASE("projecting a lifted pose recovers the 2D input exactly") {
  std::mt19937_64 rng(2);
  LifterNet<double> net(4, 24, rng);
  randomize_heads(net, rng, 0.05);
  Mat<double> x = random_mat<double>(6, 8, rng);
  Tape<double> t;
  LiftGraph<double> l = lift(t, nullptr, net, t.constant(x), 10.0);
  Val<double> back = g_project(t, l.y);
  CHECK((t.value(back) - x).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("graph and plain lifter forward passes agree") {
  std::mt19937_64 rng(3);
  LifterNet<double> net(4, 24, rng);
  randomize_heads(net, rng, 0.1);
  Mat<double> x = random_mat<double>(5, 8, rng);
  Tape<double> t;
  LiftGraph<double> lg = lift(t, nullptr, net, t.constant(x), 10.0);
  LiftPlain<double> lp = lift_plain(net, x, 10.0);
  CHECK((t.value(lg.d) - lp.d).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((t.value(lg.e).col(0) - lp.e).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((t.value(lg.y) - lp.y).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("depth floor activates when predicted offsets push joints too close") {
  std::mt19937_64 rng(4);
  LifterNet<double> net(3, 8, rng);
  // Force a large negative bias on the depth head.
  net.depth_out.b.value.setConstant(-100.0);
  Mat<double> x = random_mat<double>(2, 6, rng);
  LiftPlain<double> lp = lift_plain(net, x, 10.0);
  CHECK((lp.w.array() == 1.0).all());
}

TEST_CASE("lifter input gradient matches finite differences") {
  std::mt19937_64 rng(5);
  LifterNet<double> net(3, 12, rng);
  randomize_heads(net, rng, 0.1);
  Mat<double> x = random_mat<double>(2, 6, rng);
  double err = grad_check<double>(
      [&](Tape<double>& t, const std::vector<Val<double>>& v) {
        LiftGraph<double> l = lift(t, nullptr, net, v[0], 10.0);
        return t.add(t.mean(t.square(l.y)), t.mean(t.square(l.e)));
      },
      {x}, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("lifter parameter gradients match finite differences") {
  std::mt19937_64 rng(6);
  LifterNet<double> net(3, 10, rng);
  randomize_heads(net, rng, 0.1);
  Mat<double> x = random_mat<double>(3, 6, rng);

  auto eval = [&]() {
    Tape<double> t;
    LiftGraph<double> l = lift(t, nullptr, net, t.constant(x), 10.0);
    return t.value(t.add(t.mean(t.square(l.y)), t.mean(t.square(l.e))))(0, 0);
  };

  Tape<double> t;
  Bindings<double> bs;
  LiftGraph<double> l = lift(t, &bs, net, t.constant(x), 10.0);
  t.backward(t.add(t.mean(t.square(l.y)), t.mean(t.square(l.e))));

  double worst = 0;
  for (auto& b : bs) {
    double err = grad_check_entries<double>(eval, b.param->value, t.grad(b.node), 1e-6);
    worst = std::max(worst, err);
  }
  CHECK(worst < 1e-5);
}
