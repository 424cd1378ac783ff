#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "poselift/adam.hpp"
#include "poselift/gradcheck.hpp"
#include "poselift/losses.hpp"

using namespace poselift;

namespace {

SkeletonSpec chain3() {
  SkeletonSpec s;
  s.joints = 3;
  s.joint_names = {"a", "b", "c"};
  s.root = 0;
  s.head = 2;
  s.bones = {{0, 1}, {1, 2}};
  s.validate();
  return s;
}

template <class S>
Mat<S> random_mat(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0, scale);
  Mat<S> m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = S(d(rng));
  return m;
}

// Small end-to-end setup shared by the objective tests.
struct Setup {
  SkeletonSpec skel = chain3();
  LifterNet<double> net;
  CouplingFlow<double> flow;
  PcaModel<double> pca;
  BonePrior<double> prior;
  Mat<double> x;

  explicit Setup(int batch = 4, double xscale = 0.4) {
    std::mt19937_64 rng(99);
    net = LifterNet<double>(3, 8, rng);
    net.depth_out.W.value = random_mat<double>(8, 3, rng, 0.05);
    net.elev_out.W.value = random_mat<double>(8, 1, rng, 0.05);
    flow = CouplingFlow<double>(3, 2, 8, rng);
    Mat<double> pca_data = random_mat<double>(50, 6, rng);
    pca = fit_pca(pca_data, 3);
    prior.mean = Vec<double>::Constant(2, 1.0);
    prior.sigma = 0.1;
    x = random_mat<double>(batch, 6, rng, xscale);
  }
};

}  // namespace

TEST_CASE("equal bones give relative lengths of exactly one") {
  SkeletonSpec skel = chain3();
  Tape<double> t;
  Mat<double> y(2, 9);
  // joints at (0,0,5), (1,0,5), (2,0,5): both bones length 1
  y.row(0) << 0, 1, 2, 0, 0, 0, 5, 5, 5;
  y.row(1) << 0, 3, 6, 0, 0, 0, 5, 5, 5;  // both bones length 3
  Val<double> b = g_relative_bone_lengths(t, t.constant(y), skel);
  CHECK((t.value(b).array() - 1.0).abs().maxCoeff() < 1e-9);
}

TEST_CASE("relative bone lengths are scale invariant") {
  SkeletonSpec skel = chain3();
  std::mt19937_64 rng(1);
  Mat<double> y = random_mat<double>(3, 9, rng);
  Tape<double> t;
  Mat<double> a = t.value(g_relative_bone_lengths(t, t.constant(y), skel));
  Mat<double> b = t.value(g_relative_bone_lengths(t, t.constant(Mat<double>(7.0 * y)), skel));
  CHECK((a - b).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("bone loss at the mode equals the normalizing constant") {
  Tape<double> t;
  BonePrior<double> prior;
  prior.mean = Vec<double>::Constant(4, 1.0);
  prior.sigma = 0.1;
  Val<double> b = t.constant(Mat<double>::Ones(3, 4));
  double got = t.value(g_bone_loss(t, b, prior))(0, 0);
  CHECK(got == Catch::Approx(4.0 * std::log(0.1 * std::sqrt(2 * std::numbers::pi))));

  prior.sigma = 1.0 / std::sqrt(2 * std::numbers::pi);
  CHECK(t.value(g_bone_loss(t, b, prior))(0, 0) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("bone loss quadratic term matches a hand computation") {
  Tape<double> t;
  BonePrior<double> prior;
  prior.mean = Vec<double>::Constant(1, 1.0);
  prior.sigma = 0.1;
  Mat<double> b(1, 1);
  b << 1.2;  // (0.2)^2 / (2 * 0.01) = 2
  double got = t.value(g_bone_loss(t, t.constant(b), prior))(0, 0);
  CHECK(got == Catch::Approx(2.0 + std::log(0.1 * std::sqrt(2 * std::numbers::pi))));
}

TEST_CASE("bone prior estimated from copies of one pose recovers its lengths") {
  SkeletonSpec skel = chain3();
  Mat<double> poses(4, 9);
  Vector y(9);
  y << 0, 1, 3, 0, 0, 0, 5, 5, 5;  // bone lengths 1 and 2
  for (int i = 0; i < 4; ++i) poses.row(i) = y.transpose();
  BonePrior<double> p = estimate_bone_prior<double>(poses, skel, 0.1);
  CHECK(p.mean[0] == Catch::Approx(2.0 / 3.0));
  CHECK(p.mean[1] == Catch::Approx(4.0 / 3.0));
  CHECK(p.mean.mean() == Catch::Approx(1.0));
}

TEST_CASE("per-joint distance of a pose to itself is zero") {
  std::mt19937_64 rng(2);
  Mat<double> y = random_mat<double>(3, 9, rng);
  Tape<double> t;
  Val<double> a = t.constant(y);
  CHECK(t.value(g_perjoint_dist(t, a, a)).maxCoeff() < 1e-5);
}

TEST_CASE("relative bone length gradients match finite differences") {
  SkeletonSpec skel = chain3();
  std::mt19937_64 rng(3);
  Mat<double> y = random_mat<double>(2, 9, rng);
  BonePrior<double> prior;
  prior.mean = Vec<double>::Constant(2, 1.0);
  prior.sigma = 0.1;
  double err = grad_check<double>(
      [&](Tape<double>& t, const std::vector<Val<double>>& v) {
        return g_bone_loss(t, g_relative_bone_lengths(t, v[0], skel), prior);
      },
      {y}, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("total loss recomposes from its parts") {
  Setup s;
  Rng rng(5);
  ObjectiveConfig<double> cfg;
  LossReport<double> rep;
  Tape<double> t;
  Val<double> total = build_total_loss(t, nullptr, t.constant(s.x), s.net, s.flow,
                                       s.pca, s.prior, s.skel, rng, cfg, &rep);
  CHECK(std::isfinite(rep.total));
  CHECK(rep.total == Catch::Approx(rep.l_nf + 50.0 * rep.l_bone + rep.l_3d +
                                   rep.l_def + rep.l_2d).epsilon(1e-9));
  CHECK(t.value(total)(0, 0) == rep.total);
  CHECK(rep.l_3d >= 0);
  CHECK(rep.l_def >= 0);
  CHECK(rep.l_2d >= 0);
}

TEST_CASE("ablation flags zero out their loss terms") {
  Setup s;
  ObjectiveConfig<double> cfg;

  SECTION("no flow likelihood") {
    cfg.use_nf = false;
    Rng rng(5);
    LossReport<double> rep;
    Tape<double> t;
    build_total_loss(t, nullptr, t.constant(s.x), s.net, s.flow, s.pca, s.prior,
                     s.skel, rng, cfg, &rep);
    CHECK(rep.l_nf == 0.0);
    CHECK(rep.total == Catch::Approx(50.0 * rep.l_bone + rep.l_3d + rep.l_def + rep.l_2d));
  }
  SECTION("no bone prior") {
    cfg.use_bone = false;
    Rng rng(5);
    LossReport<double> rep;
    Tape<double> t;
    build_total_loss(t, nullptr, t.constant(s.x), s.net, s.flow, s.pca, s.prior,
                     s.skel, rng, cfg, &rep);
    CHECK(rep.l_bone == 0.0);
    CHECK(rep.total == Catch::Approx(rep.l_nf + rep.l_3d + rep.l_def + rep.l_2d));
  }
  SECTION("no subspace: flow sees raw 2D poses") {
    cfg.use_pca = false;
    std::mt19937_64 wrng(7);
    CouplingFlow<double> flow6(6, 2, 8, wrng);
    Rng rng(5);
    LossReport<double> rep;
    Tape<double> t;
    build_total_loss(t, nullptr, t.constant(s.x), s.net, flow6, s.pca, s.prior,
                     s.skel, rng, cfg, &rep);
    CHECK(std::isfinite(rep.l_nf));
  }
  SECTION("no learned elevation: uniform sampler, stats pinned") {
    cfg.use_elevation = false;
    Rng rng(5);
    LossReport<double> rep;
    Tape<double> t;
    build_total_loss(t, nullptr, t.constant(s.x), s.net, s.flow, s.pca, s.prior,
                     s.skel, rng, cfg, &rep);
    CHECK(rep.mu_e == 0.0);
    CHECK(rep.sigma_e == Catch::Approx(kUniformElevationRange / std::sqrt(3.0)));
  }
}

TEST_CASE("ablations change the sampled rotations identically per seed") {
  // Same seed twice gives bitwise-identical reports.
  Setup s;
  ObjectiveConfig<double> cfg;
  auto run = [&]() {
    Rng rng(42);
    LossReport<double> rep;
    Tape<double> t;
    build_total_loss(t, nullptr, t.constant(s.x), s.net, s.flow, s.pca, s.prior,
                     s.skel, rng, cfg, &rep);
    return rep;
  };
  LossReport<double> a = run();
  LossReport<double> b = run();
  CHECK(a.total == b.total);
  CHECK(a.l_nf == b.l_nf);
  CHECK(a.l_def == b.l_def);
}

TEST_CASE("zero-initialized lifter reports floored elevation stats") {
  Setup s;
  std::mt19937_64 rng0(99);
  LifterNet<double> fresh(3, 8, rng0);  // heads untouched: e = 0 for every sample
  ObjectiveConfig<double> cfg;
  Rng rng(5);
  LossReport<double> rep;
  Tape<double> t;
  build_total_loss(t, nullptr, t.constant(s.x), fresh, s.flow, s.pca, s.prior,
                   s.skel, rng, cfg, &rep);
  CHECK(rep.mu_e == 0.0);
  CHECK(rep.sigma_e == Catch::Approx(kSigmaFloor));
}

TEST_CASE("rotated joints behind the camera hit the depth floor") {
  Setup s(6, 8.0);  // huge 2D coordinates -> lifted joints far from the root
  ObjectiveConfig<double> cfg;
  Rng rng(5);
  LossReport<double> rep;
  Tape<double> t;
  build_total_loss(t, nullptr, t.constant(s.x), s.net, s.flow, s.pca, s.prior,
                   s.skel, rng, cfg, &rep);
  CHECK(rep.clamped_depths > 0);
  CHECK(std::isfinite(rep.total));
}

TEST_CASE("total loss input gradients match finite differences") {
  Setup s;
  ObjectiveConfig<double> cfg;
  Rng seeder(5);
  std::string state = seeder.save_state();
  double err = grad_check<double>(
      [&](Tape<double>& t, const std::vector<Val<double>>& v) {
        Rng rng(0);
        rng.load_state(state);
        return build_total_loss(t, nullptr, v[0], s.net, s.flow, s.pca, s.prior,
                                s.skel, rng, cfg);
      },
      {s.x}, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("total loss parameter gradients match finite differences") {
  Setup s(3);
  ObjectiveConfig<double> cfg;
  Rng seeder(5);
  std::string state = seeder.save_state();

  auto eval = [&]() {
    Rng rng(0);
    rng.load_state(state);
    Tape<double> t;
    return t.value(build_total_loss(t, nullptr, t.constant(s.x), s.net, s.flow,
                                    s.pca, s.prior, s.skel, rng, cfg))(0, 0);
  };

  Rng rng(0);
  rng.load_state(state);
  Tape<double> t;
  Bindings<double> bs;
  Val<double> total = build_total_loss(t, &bs, t.constant(s.x), s.net, s.flow,
                                       s.pca, s.prior, s.skel, rng, cfg);
  t.backward(total);

  // the lifter is applied twice per loss, so gradients must be summed
  // across the duplicate bindings
  auto grads = coalesce_grads(t, bs);
  CHECK(grads.size() < bs.size());
  double worst = 0;
  for (auto& [param, grad] : grads) {
    double err = grad_check_entries<double>(eval, param->value, grad, 1e-6);
    worst = std::max(worst, err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("frozen flow receives no parameter bindings") {
  Setup s;
  ObjectiveConfig<double> cfg;  // train_flow = false
  Rng rng(5);
  Tape<double> t;
  Bindings<double> bs;
  build_total_loss(t, &bs, t.constant(s.x), s.net, s.flow, s.pca, s.prior,
                   s.skel, rng, cfg);
  for (auto& b : bs) CHECK(b.param->name.find("flow") == std::string::npos);
}
