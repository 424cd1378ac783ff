#ifndef POSELIFT_POSE_GRAPH_HPP_
#define POSELIFT_POSE_GRAPH_HPP_

#include <array>

#include "poselift/tensor.hpp"

namespace poselift {

// Differentiable counterparts of the geometry ops, operating on batches:
// 2D poses are [B x 2J] ([u.., v..]), 3D poses [B x 3J] ([x.., y.., z..]).

/// y_j = [u_j w_j, v_j w_j, w_j]; x is [B x 2J], w is [B x J].
template <class S>
Val<S> g_unproject(Tape<S>& t, Val<S> x, Val<S> w) {
  Eigen::Index J = t.value(w).cols();
  Val<S> u = t.slice_cols(x, 0, J);
  Val<S> v = t.slice_cols(x, J, J);
  return t.concat_cols({t.mul(u, w), t.mul(v, w), w});
}

/// Per joint [x/z, y/z]. Depths must be positive; clamp upstream.
template <class S>
Val<S> g_project(Tape<S>& t, Val<S> y) {
  Eigen::Index J = t.value(y).cols() / 3;
  Val<S> xs = t.slice_cols(y, 0, J);
  Val<S> ys = t.slice_cols(y, J, J);
  Val<S> zs = t.slice_cols(y, 2 * J, J);
  return t.concat_cols({t.div(xs, zs), t.div(ys, zs)});
}

/// Subtracts the root joint from every joint, per axis.
template <class S>
Val<S> g_center_root(Tape<S>& t, Val<S> y, int root) {
  Eigen::Index J = t.value(y).cols() / 3;
  std::array<Val<S>, 3> out;
  for (int a = 0; a < 3; ++a) {
    Val<S> axis = t.slice_cols(y, a * J, J);
    Val<S> r = t.slice_cols(y, a * J + root, 1);
    out[a] = t.sub(axis, r);
  }
  return t.concat_cols({out[0], out[1], out[2]});
}

/// Per-sample 3x3 rotation entries, row-major, each [B x 1].
template <class S>
struct RotEntries {
  std::array<Val<S>, 9> e;
  Val<S>& operator()(int r, int c) { return e[r * 3 + c]; }
  const Val<S>& operator()(int r, int c) const { return e[r * 3 + c]; }
};

/// Rotation about the camera x-axis from per-sample angles [B x 1].
template <class S>
RotEntries<S> g_rot_elevation(Tape<S>& t, Val<S> angle) {
  Eigen::Index b = t.value(angle).rows();
  Val<S> one = t.constant(Mat<S>::Ones(b, 1));
  Val<S> zero = t.constant(Mat<S>::Zero(b, 1));
  Val<S> c = t.cos(angle);
  Val<S> s = t.sin(angle);
  RotEntries<S> r;
  r.e = {one, zero, zero,
         zero, c, t.neg(s),
         zero, s, c};
  return r;
}

/// Rotation about the up-axis from per-sample angles [B x 1].
template <class S>
RotEntries<S> g_rot_azimuth(Tape<S>& t, Val<S> angle) {
  Eigen::Index b = t.value(angle).rows();
  Val<S> one = t.constant(Mat<S>::Ones(b, 1));
  Val<S> zero = t.constant(Mat<S>::Zero(b, 1));
  Val<S> c = t.cos(angle);
  Val<S> s = t.sin(angle);
  RotEntries<S> r;
  r.e = {c, zero, s,
         zero, one, zero,
         t.neg(s), zero, c};
  return r;
}

template <class S>
RotEntries<S> g_transpose(const RotEntries<S>& a) {
  RotEntries<S> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.e[i * 3 + j] = a.e[j * 3 + i];
  return r;
}

template <class S>
RotEntries<S> g_compose(Tape<S>& t, const RotEntries<S>& a, const RotEntries<S>& b) {
  RotEntries<S> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Val<S> acc = t.mul(a(i, 0), b(0, j));
      acc = t.add(acc, t.mul(a(i, 1), b(1, j)));
      acc = t.add(acc, t.mul(a(i, 2), b(2, j)));
      r(i, j) = acc;
    }
  return r;
}

/// Applies per-sample rotations to [B x 3J] poses via broadcasting.
template <class S>
Val<S> g_apply_rot(Tape<S>& t, const RotEntries<S>& r, Val<S> y) {
  Eigen::Index J = t.value(y).cols() / 3;
  std::array<Val<S>, 3> axes = {t.slice_cols(y, 0, J), t.slice_cols(y, J, J),
                                t.slice_cols(y, 2 * J, J)};
  std::array<Val<S>, 3> out;
  for (int i = 0; i < 3; ++i) {
    Val<S> acc = t.mul(r(i, 0), axes[0]);
    acc = t.add(acc, t.mul(r(i, 1), axes[1]));
    acc = t.add(acc, t.mul(r(i, 2), axes[2]));
    out[i] = acc;
  }
  return t.concat_cols({out[0], out[1], out[2]});
}

}  // namespace poselift

#endif  // POSELIFT_POSE_GRAPH_HPP_
