#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "poselift/metrics.hpp"

using namespace poselift;

namespace {

Vector random_pose(int J, std::mt19937_64& rng, double scale = 300.0) {
  std::normal_distribution<double> d(0, scale);
  Vector y(3 * J);
  for (int i = 0; i < 3 * J; ++i) y[i] = d(rng);
  return y;
}

}  // namespace

TEST_CASE("exact prediction scores zero error and full pck/auc/cps") {
  std::mt19937_64 rng(1);
  Vector gt = random_pose(17, rng);
  MpjpeTriple m = mpjpe_family(gt, gt);
  CHECK(m.mpjpe == Catch::Approx(0.0).margin(1e-9));
  CHECK(m.n_mpjpe == Catch::Approx(0.0).margin(1e-9));
  CHECK(m.pa_mpjpe == Catch::Approx(0.0).margin(1e-9));
  PckAuc p = pck_auc(gt, gt);
  CHECK(p.pck == 100.0);
  CHECK(p.auc == 100.0);
  CHECK(cps({gt}, {gt}) == Catch::Approx(300.0));
}

TEST_CASE("a pure scale error vanishes under N- and PA-alignment") {
  std::mt19937_64 rng(2);
  Vector gt = random_pose(17, rng);
  MpjpeTriple m = mpjpe_family(Vector(2.0 * gt), gt);
  CHECK(m.mpjpe > 0);
  CHECK(m.n_mpjpe == Catch::Approx(0.0).margin(1e-9));
  CHECK(m.pa_mpjpe == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("alignment never increases the error on random pairs") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    Vector gt = random_pose(8, rng);
    Vector pred = gt + random_pose(8, rng, 50.0);
    MpjpeTriple m = mpjpe_family(pred, gt);
    CHECK(m.n_mpjpe <= m.mpjpe + 1e-9);
    CHECK(m.pa_mpjpe <= m.n_mpjpe + 1e-9);
  }
}

TEST_CASE("zero-norm prediction is rejected") {
  Vector gt = Vector::Ones(9);
  CHECK_THROWS(mpjpe_family(Vector::Zero(9), gt));
}

TEST_CASE("pck is zero when every joint is off by 200mm") {
  int J = 5;
  Vector gt = Vector::Zero(3 * J);
  for (int j = 0; j < J; ++j) gt[j] = 1000.0 * (j + 1);  // spread on x
  Vector pred = gt;
  for (int j = 0; j < J; ++j) pred[2 * J + j] += 200.0;   // 200mm off in z
  // disable the scale fit effect by checking the unscaled variant: the
  // optimal scale cannot bring all joints under 150mm here
  PckAuc p = pck_auc(pred, gt);
  CHECK(p.pck < 100.0 / J + 1e-9);
}

TEST_CASE("single 75mm joint error enumerates the auc grid exactly") {
  int J = 17;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> d(-500, 500);
  Vector gt(3 * J);
  for (int i = 0; i < 3 * J; ++i) gt[i] = double(d(rng));
  // Perturb one z-coordinate by +75 and pick gt there so the optimal scale
  // is exactly 1: s = <pred,gt>/<pred,pred> = 1 iff <delta,gt> = -|delta|^2.
  gt[2 * J] = -75.0;
  Vector pred = gt;
  pred[2 * J] += 75.0;
  REQUIRE(pred.dot(gt) == pred.squaredNorm());
  PckAuc p = pck_auc(pred, gt);
  CHECK(p.pck == 100.0);
  // grid 0,5,...,150 (31 points): the perturbed joint counts at the 16
  // thresholds >= 75, the 16 exact joints count everywhere
  double want = (16.0 / 17.0) * 100.0 + (1.0 / 17.0) * (16.0 / 31.0) * 100.0;
  CHECK(p.auc == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("pck and auc fall as errors inflate") {
  std::mt19937_64 rng(5);
  Vector gt = random_pose(17, rng);
  Vector noise = random_pose(17, rng, 40.0);
  double prev_pck = 101, prev_auc = 101;
  for (double k : {0.5, 1.0, 2.0, 4.0}) {
    // additive error orthogonalized against scale by the metric itself
    PckAuc p = pck_auc(gt + k * noise, gt);
    CHECK(p.pck <= prev_pck + 1e-9);
    CHECK(p.auc <= prev_auc + 1e-9);
    prev_pck = p.pck;
    prev_auc = p.auc;
  }
}

TEST_CASE("cps of a single pose with 100mm max aligned error is 200") {
  int J = 4;
  Vector gt = Vector::Zero(3 * J);
  gt << 0, 1000, 0, 1000,   0, 0, 1000, 1000,   0, 0, 0, 500;
  Vector pred = gt;
  pred[2 * J + 0] += 100.0;
  // procrustes can reduce the 100mm; compute the aligned max error first
  double aligned = perjoint_errors(procrustes_align(pred, gt), gt).maxCoeff();
  double want = 300.0 - std::floor(aligned);
  CHECK(cps({pred}, {gt}) == Catch::Approx(want));
}

TEST_CASE("cps is zero beyond the maximum threshold and full when exact") {
  std::mt19937_64 rng(6);
  Vector gt = random_pose(6, rng);
  Vector far = gt;
  far[0] += 1e6;  // guaranteed > 300mm even after alignment
  CHECK(cps({far}, {gt}) == 0.0);
  CHECK(cps({gt}, {gt}) == 300.0);
}

TEST_CASE("cps of a mixed set lies between its subsets") {
  std::mt19937_64 rng(7);
  std::vector<Vector> good, bad, gt_good, gt_bad;
  for (int i = 0; i < 5; ++i) {
    Vector g = random_pose(6, rng);
    gt_good.push_back(g);
    good.push_back(g + random_pose(6, rng, 5.0));
    Vector g2 = random_pose(6, rng);
    gt_bad.push_back(g2);
    bad.push_back(g2 + random_pose(6, rng, 200.0));
  }
  double c_good = cps(good, gt_good);
  double c_bad = cps(bad, gt_bad);
  std::vector<Vector> all = good, gt_all = gt_good;
  all.insert(all.end(), bad.begin(), bad.end());
  gt_all.insert(gt_all.end(), gt_bad.begin(), gt_bad.end());
  double c_all = cps(all, gt_all);
  CHECK(c_all >= std::min(c_good, c_bad) - 1e-9);
  CHECK(c_all <= std::max(c_good, c_bad) + 1e-9);
}

TEST_CASE("aggregate report averages per-pose numbers and saves as csv") {
  std::mt19937_64 rng(8);
  std::vector<Vector> pred, gt;
  for (int i = 0; i < 10; ++i) {
    Vector g = random_pose(17, rng);
    gt.push_back(g);
    pred.push_back(g + random_pose(17, rng, 30.0));
  }
  EvalReport r = evaluate_poses(pred, gt);
  CHECK(r.poses == 10);
  double mean = 0;
  for (const auto& m : r.per_pose) mean += m.pa_mpjpe;
  CHECK(r.pa_mpjpe == Catch::Approx(mean / 10.0));
  CHECK(r.pa_mpjpe <= r.n_mpjpe);
  CHECK(r.n_mpjpe <= r.mpjpe);

  std::string path = "/tmp/poselift_test_report.csv";
  save_eval_report(r, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "metric,value");
  std::remove(path.c_str());
  CHECK(!format_eval_report(r).empty());
}

TEST_CASE("spearman correlation fixtures") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == Catch::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {9, 7, 5, 3}) == Catch::Approx(-1.0));
  // monotone but nonlinear: rank correlation stays exactly 1
  CHECK(spearman({1, 2, 3, 4, 5}, {1, 8, 27, 64, 125}) == Catch::Approx(1.0));
  // ties: average ranks; hand value for (1,1,2) vs (1,2,2)
  double r = spearman({1, 1, 2}, {1, 2, 2});
  CHECK(r == Catch::Approx(0.5));
  CHECK(spearman({1, 1, 1}, {1, 2, 3}) == 0.0);
  CHECK_THROWS(spearman({1.0}, {2.0}));
}
