#ifndef POSELIFT_LOSSES_HPP_
#define POSELIFT_LOSSES_HPP_

#include <algorithm>
#include <limits>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "poselift/camera.hpp"
#include "poselift/flow.hpp"
#include "poselift/geometry.hpp"
#include "poselift/lifter.hpp"
#include "poselift/pca.hpp"
#include "poselift/pose_graph.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

/// Gaussian prior on relative bone lengths (mean length of all bones = 1).
template <class S>
struct BonePrior {
  Vec<S> mean;  // [K]
  S sigma = S(0.1);
};

constexpr double kBoneLengthEpsilon = 1e-12;

/// b_k = |bone_k| / mean_k |bone_k| per sample. y is [B x 3J].
template <class S>
Val<S> g_relative_bone_lengths(Tape<S>& t, Val<S> y, const SkeletonSpec& skel) {
  int J = skel.joints;
  std::vector<int> parents, children;
  for (auto [p, c] : skel.bones) {
    parents.push_back(p);
    children.push_back(c);
  }
  Val<S> len2;
  for (int a = 0; a < 3; ++a) {
    Val<S> axis = t.slice_cols(y, a * J, J);
    Val<S> d = t.sub(t.gather_cols(axis, children), t.gather_cols(axis, parents));
    Val<S> d2 = t.square(d);
    len2 = (a == 0) ? d2 : t.add(len2, d2);
  }
  Val<S> len = t.sqrt(t.add_scalar(len2, S(kBoneLengthEpsilon)));
  Val<S> mean_len = t.row_mean(len);
  if (t.value(mean_len).minCoeff() < S(1e-8))
    throw std::domain_error("relative_bone_lengths: mean bone length below 1e-8");
  return t.div(len, mean_len);
}

/// Negative log-likelihood of the Gaussian bone prior, batch-averaged.
/// Normalizing constants are kept so the value reads as an NLL.
template <class S>
Val<S> g_bone_loss(Tape<S>& t, Val<S> b, const BonePrior<S>& prior) {
  int K = int(prior.mean.size());
  Val<S> diff = t.sub(b, t.constant(Mat<S>(prior.mean.transpose())));
  Val<S> quad = t.scale(t.row_sum(t.square(diff)), S(1) / (S(2) * prior.sigma * prior.sigma));
  S log_norm = S(K) * S(std::log(double(prior.sigma) * std::sqrt(2.0 * std::numbers::pi)));
  return t.add_scalar(t.mean(quad), log_norm);
}

/// Relative bone lengths of a single plain 3D pose.
inline Eigen::VectorXd relative_bone_lengths_plain(const Vector& y, const SkeletonSpec& skel) {
  int J = skel.joints;
  int K = int(skel.bones.size());
  Eigen::VectorXd len(K);
  for (int k = 0; k < K; ++k) {
    auto [p, c] = skel.bones[k];
    Eigen::Vector3d d(y[c] - y[p], y[J + c] - y[J + p], y[2 * J + c] - y[2 * J + p]);
    len[k] = d.norm();
  }
  double m = len.mean();
  if (m < 1e-8) throw std::domain_error("relative_bone_lengths: mean bone length below 1e-8");
  return len / m;
}

/// Prior from given (unnormalized) bone lengths; rescaled to mean 1.
template <class S>
BonePrior<S> bone_prior_from_lengths(const Eigen::VectorXd& lengths, S sigma) {
  if (lengths.size() == 0) throw std::invalid_argument("bone prior: empty length list");
  BonePrior<S> prior;
  prior.mean = (lengths / lengths.mean()).template cast<S>();
  prior.sigma = sigma;
  return prior;
}

/// Prior estimated as the average relative bone lengths over a set of 3D
/// poses (rows of [N x 3J]), renormalized to mean 1.
template <class S>
BonePrior<S> estimate_bone_prior(const Mat<S>& poses, const SkeletonSpec& skel, S sigma) {
  if (poses.rows() == 0) throw std::invalid_argument("bone prior: empty pose set");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(Eigen::Index(skel.bones.size()));
  for (Eigen::Index i = 0; i < poses.rows(); ++i)
    acc += relative_bone_lengths_plain(poses.row(i).transpose().template cast<double>(), skel);
  acc /= double(poses.rows());
  return bone_prior_from_lengths<S>(acc, sigma);
}

/// Per-joint Euclidean distances between two [B x 3J] poses -> [B x J].
template <class S>
Val<S> g_perjoint_dist(Tape<S>& t, Val<S> a, Val<S> b) {
  Eigen::Index J = t.value(a).cols() / 3;
  Val<S> diff = t.sub(a, b);
  Val<S> acc;
  for (int ax = 0; ax < 3; ++ax) {
    Val<S> d2 = t.square(t.slice_cols(diff, ax * J, J));
    acc = (ax == 0) ? d2 : t.add(acc, d2);
  }
  return t.sqrt(t.add_scalar(acc, S(kBoneLengthEpsilon)));
}

template <class S>
struct ObjectiveConfig {
  S depth = S(10);
  S sigma_floor = S(kSigmaFloor);
  S bone_weight = S(50);
  S min_rotated_depth = S(0.1);
  S nf_clamp = S(2000);  // absolute per-sample NLL cap; 0 disables
  S nf_trim = S(0.1);     // per-batch winsorized fraction; 0 disables
  S cycle_weight = S(1);  // weight of the L_3D + L_def + L_2D group
  bool use_pca = true;
  bool use_elevation = true;
  bool use_bone = true;
  bool use_nf = true;
  bool train_flow = false;            // flow frozen during lifter training
  bool grad_through_correction = true;
  bool stop_grad_target = false;      // detach y2 in the cycle losses
};

/// Loss values for one batch. total = L_NF + bone_weight * L_bone +
/// (L_3D + L_def + L_2D); disabled terms contribute exactly zero.
template <class S>
struct LossReport {
  S l_nf = 0, l_bone = 0, l_3d = 0, l_def = 0, l_2d = 0, total = 0;
  S mu_e = 0, sigma_e = 0;
  int clamped_depths = 0;  // rotated joints that hit the depth floor
};

/// Full training objective for one batch of normalized 2D poses [B x 2J].
/// Returns the scalar total-loss node; fills `report` with the parts.
template <class S>
Val<S> build_total_loss(Tape<S>& t, std::type_identity_t<Bindings<S>*> bs, Val<S> x,
                        LifterNet<S>& net,
                        CouplingFlow<S>& flow, const PcaModel<S>& pca,
                        const BonePrior<S>& prior, const SkeletonSpec& skel,
                        Rng& rng, const ObjectiveConfig<S>& cfg,
                        LossReport<S>* report = nullptr) {
  Eigen::Index B = t.value(x).rows();
  int J = skel.joints;

  // lift and center
  LiftGraph<S> l1 = lift(t, bs, net, x, cfg.depth);
  Val<S> y1c = g_center_root(t, l1.y, skel.root);

  // virtual camera
  Val<S> mu, sigma;
  if (cfg.use_elevation) {
    auto [m, s] = g_batch_elevation_stats(t, l1.e, cfg.sigma_floor);
    mu = m;
    sigma = s;
  } else {
    mu = t.scalar(S(0));
    sigma = t.scalar(S(kUniformElevationRange) / S(std::sqrt(3.0)));
  }
  RotEntries<S> rot = g_sample_rotations(t, l1.e, mu, sigma, rng, cfg.use_elevation,
                                         cfg.grad_through_correction);
  Val<S> y2c = g_apply_rot(t, rot, y1c);

  // move to depth D, clamp depths that ended up too close to the camera
  Val<S> z2 = t.add_scalar(t.slice_cols(y2c, 2 * J, J), cfg.depth);
  int clamped = int((t.value(z2).array() < cfg.min_rotated_depth).count());
  Val<S> y2 = t.concat_cols({t.slice_cols(y2c, 0, J), t.slice_cols(y2c, J, J),
                             t.clamp_min(z2, cfg.min_rotated_depth)});
  Val<S> x2 = g_project(t, y2);

  // reprojection likelihood
  Val<S> zero = t.scalar(S(0));
  Val<S> l_nf = zero;
  if (cfg.use_nf) {
    Val<S> coeffs = cfg.use_pca ? g_to_subspace(t, x2, pca) : x2;
    if (cfg.nf_clamp > S(0) || cfg.nf_trim > S(0)) {
      // Winsorize the per-sample NLL: the flow density has very sharp tails,
      // and without a cap a handful of reprojections can dominate the batch
      // mean and drown the signal from the remaining samples. The cap is the
      // smaller of a fixed ceiling and a per-batch quantile, so it tracks the
      // loss scale from the first (very lossy) epochs to convergence.
      Val<S> nll = t.neg(flow.log_likelihood(t, cfg.train_flow ? bs : nullptr, coeffs));
      S cap = cfg.nf_clamp > S(0) ? cfg.nf_clamp : std::numeric_limits<S>::max();
      if (cfg.nf_trim > S(0) && B > 1) {
        std::vector<S> vals(static_cast<std::size_t>(B));
        for (Eigen::Index i = 0; i < B; ++i) vals[std::size_t(i)] = t.value(nll)(i, 0);
        auto k = vals.begin() + Eigen::Index(double(B - 1) * double(S(1) - cfg.nf_trim));
        std::nth_element(vals.begin(), k, vals.end());
        cap = std::min(cap, *k);
      }
      Val<S> capped =
          t.add_scalar(t.neg(t.clamp_min(t.add_scalar(t.neg(nll), cap), S(0))), cap);
      l_nf = t.mean(capped);
    } else {
      l_nf = flow.nf_loss(t, cfg.train_flow ? bs : nullptr, coeffs);
    }
  }

  // skeleton prior on the lifted pose
  Val<S> l_bone = zero;
  if (cfg.use_bone) l_bone = g_bone_loss(t, g_relative_bone_lengths(t, l1.y, skel), prior);

  // cycle losses: lift the virtual view again
  Val<S> y2_target = cfg.stop_grad_target ? t.detach(y2) : y2;
  LiftGraph<S> l2 = lift(t, bs, net, x2, cfg.depth);
  Val<S> l_3d = t.mean(t.row_mean(g_perjoint_dist(t, l2.y, y2_target)));

  Val<S> y1c_target = cfg.stop_grad_target ? t.detach(y1c) : y1c;
  Val<S> y2c_lifted = g_center_root(t, l2.y, skel.root);
  Val<S> y1_back = g_apply_rot(t, g_transpose(rot), y2c_lifted);
  Val<S> l_def = zero;
  if (B >= 2) {
    Val<S> delta = t.sub(y1_back, y1c_target);
    Val<S> pair_diff = t.sub(delta, t.roll_rows(delta, 1));
    // |a - b| of per-joint distances; self-pairing would give exactly zero
    Eigen::Index Jc = Eigen::Index(J);
    Val<S> acc;
    for (int ax = 0; ax < 3; ++ax) {
      Val<S> d2 = t.square(t.slice_cols(pair_diff, ax * Jc, Jc));
      acc = (ax == 0) ? d2 : t.add(acc, d2);
    }
    l_def = t.mean(t.row_mean(t.sqrt(t.add_scalar(acc, S(kBoneLengthEpsilon)))));
  }

  Val<S> z1_back = t.clamp_min(t.add_scalar(t.slice_cols(y1_back, 2 * J, J), cfg.depth),
                               cfg.min_rotated_depth);
  Val<S> y1_back_cam = t.concat_cols({t.slice_cols(y1_back, 0, J),
                                      t.slice_cols(y1_back, J, J), z1_back});
  Val<S> x_back = g_project(t, y1_back_cam);
  Val<S> l_2d = t.mean(t.abs(t.sub(x_back, x)));

  Val<S> base = t.add(t.add(l_3d, l_def), l_2d);
  Val<S> total = cfg.cycle_weight == S(1) ? base : t.scale(base, cfg.cycle_weight);
  if (cfg.use_bone) total = t.add(total, t.scale(l_bone, cfg.bone_weight));
  if (cfg.use_nf) total = t.add(total, l_nf);

  if (report != nullptr) {
    report->l_nf = t.value(l_nf)(0, 0);
    report->l_bone = t.value(l_bone)(0, 0);
    report->l_3d = t.value(l_3d)(0, 0);
    report->l_def = t.value(l_def)(0, 0);
    report->l_2d = t.value(l_2d)(0, 0);
    report->total = t.value(total)(0, 0);
    report->mu_e = t.value(mu)(0, 0);
    report->sigma_e = t.value(sigma)(0, 0);
    report->clamped_depths = clamped;
  }
  return total;
}

}  // namespace poselift

#endif  // POSELIFT_LOSSES_HPP_
