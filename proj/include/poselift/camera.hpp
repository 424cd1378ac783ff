#ifndef POSELIFT_CAMERA_HPP_
#define POSELIFT_CAMERA_HPP_

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "poselift/geometry.hpp"
#include "poselift/pose_graph.hpp"
#include "poselift/rng.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

/// Floor on the batch elevation std, preventing early collapse of the
/// learned distribution.
constexpr double kSigmaFloor = 1e-3;

/// Uniform elevation half-range used by the no-elevation ablation sampler.
constexpr double kUniformElevationRange = std::numbers::pi / 9.0;

struct ElevationStats {
  double mu = 0.0;
  double sigma = kSigmaFloor;
  int batch = 0;
};

/// Sample mean and unbiased std of the batch elevations [B x 1], with the
/// std floored. Both outputs are 1x1 and differentiable wrt e.
template <class S>
std::pair<Val<S>, Val<S>> g_batch_elevation_stats(Tape<S>& t, Val<S> e,
                                                  S sigma_floor = S(kSigmaFloor)) {
  Eigen::Index b = t.value(e).rows();
  if (b < 2) throw std::invalid_argument("batch_elevation_stats: batch size must be >= 2");
  Val<S> mu = t.col_mean(e);
  Val<S> centered = t.sub(e, mu);
  Val<S> var = t.scale(t.col_sum(t.square(centered)), S(1) / S(b - 1));
  Val<S> sigma = t.sqrt(t.clamp_min(var, sigma_floor * sigma_floor));
  return {mu, sigma};
}

/// Per-batch virtual-camera rotations, applied to column-vector poses as
/// R * y. In the learned-elevation mode R = R~_e R_a R_e^T: the pose is
/// first made upright by R_e^T (R_e from the per-sample predicted
/// elevation), then spun about the gravity axis by R_a ~ U[-pi, pi], then
/// tilted to a new elevation by R~_e from the reparametrized resample
/// mu + sigma * eps. Gradients flow through e, mu, and sigma but not
/// through the azimuth or eps draws.
///
/// With use_elevation = false this reproduces the prior-work sampler:
/// R = R_e R_a with elevation ~ U[-pi/9, pi/9] and no upright correction.
template <class S>
RotEntries<S> g_sample_rotations(Tape<S>& t, Val<S> e, Val<S> mu, Val<S> sigma,
                                 Rng& rng, bool use_elevation = true,
                                 bool grad_through_correction = true) {
  Eigen::Index b = t.value(e).rows();
  Mat<S> az(b, 1);
  for (Eigen::Index i = 0; i < b; ++i)
    az(i, 0) = S(rng.uniform(-std::numbers::pi, std::numbers::pi));
  RotEntries<S> ra = g_rot_azimuth(t, t.constant(az));

  if (!use_elevation) {
    Mat<S> el(b, 1);
    for (Eigen::Index i = 0; i < b; ++i)
      el(i, 0) = S(rng.uniform(-kUniformElevationRange, kUniformElevationRange));
    RotEntries<S> re = g_rot_elevation(t, t.constant(el));
    return g_compose(t, re, ra);
  }

  Mat<S> eps(b, 1);
  for (Eigen::Index i = 0; i < b; ++i) eps(i, 0) = S(rng.normal());
  Val<S> resampled = t.add(mu, t.mul(sigma, t.constant(eps)));
  RotEntries<S> re_tilde = g_rot_elevation(t, resampled);
  Val<S> e_corr = grad_through_correction ? e : t.detach(e);
  RotEntries<S> re_t = g_transpose(g_rot_elevation(t, e_corr));
  return g_compose(t, re_tilde, g_compose(t, ra, re_t));
}

/// Non-graph sampler used at inference time (score_likelihood).
inline Matrix3 sample_rotation_plain(double e, const ElevationStats& stats, Rng& rng) {
  double a = rng.uniform(-std::numbers::pi, std::numbers::pi);
  double resampled = stats.mu + stats.sigma * rng.normal();
  return rot_elevation(resampled) * rot_azimuth(a) * rot_elevation(e).transpose();
}

}  // namespace poselift

#endif  // POSELIFT_CAMERA_HPP_
