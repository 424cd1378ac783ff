#ifndef POSELIFT_LIFTER_HPP_
#define POSELIFT_LIFTER_HPP_

#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "poselift/nn.hpp"
#include "poselift/pose_graph.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

/// Two fully connected layers with leaky ReLU, skip-added.
template <class S>
struct ResidualBlock {
  Linear<S> fc1, fc2;

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int width, std::mt19937_64& rng)
      : fc1(name + ".fc1", width, width, rng), fc2(name + ".fc2", width, width, rng) {}

  Val<S> apply(Tape<S>& t, Bindings<S>* bs, Val<S> x) {
    Val<S> h = t.leaky_relu(fc1.apply(t, bs, x));
    h = t.leaky_relu(fc2.apply(t, bs, h));
    return t.add(x, h);
  }

  Mat<S> apply_plain(const Mat<S>& x) const {
    auto lrelu = [](const Mat<S>& m) { return Mat<S>(m.array().max(S(0.01) * m.array())); };
    Mat<S> h = lrelu(fc1.apply_plain(x));
    h = lrelu(fc2.apply_plain(h));
    return x + h;
  }

  void collect(std::vector<Param<S>*>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

/// Residual MLP predicting per-joint depth offsets, with a parallel branch
/// of identical shape predicting the camera elevation angle. Both branches
/// share the input upscaling layer. Output layers are zero-initialized so
/// an untrained net lifts to the flat pose at depth D with elevation 0.
template <class S>
struct LifterNet {
  int joints = 0;
  Linear<S> input;
  std::vector<ResidualBlock<S>> depth_blocks;
  Linear<S> depth_out;
  std::vector<ResidualBlock<S>> elev_blocks;
  Linear<S> elev_out;

  LifterNet() = default;
  LifterNet(int J, int width, std::mt19937_64& rng) : joints(J) {
    input = Linear<S>("lifter.input", 2 * J, width, rng);
    for (int i = 0; i < 3; ++i) {
      depth_blocks.emplace_back("lifter.depth.res" + std::to_string(i), width, rng);
      elev_blocks.emplace_back("lifter.elev.res" + std::to_string(i), width, rng);
    }
    depth_out = Linear<S>("lifter.depth.out", width, J, rng, /*zero_init=*/true);
    elev_out = Linear<S>("lifter.elev.out", width, 1, rng, /*zero_init=*/true);
  }

  /// Returns (d [B x J], e [B x 1]).
  std::pair<Val<S>, Val<S>> forward(Tape<S>& t, Bindings<S>* bs, Val<S> x) {
    Val<S> h = t.leaky_relu(input.apply(t, bs, x));
    Val<S> hd = h;
    for (auto& b : depth_blocks) hd = b.apply(t, bs, hd);
    Val<S> d = depth_out.apply(t, bs, hd);
    Val<S> he = h;
    for (auto& b : elev_blocks) he = b.apply(t, bs, he);
    Val<S> e = elev_out.apply(t, bs, he);
    if (!t.value(d).allFinite() || !t.value(e).allFinite())
      throw std::runtime_error("lifter: non-finite activations");
    return {d, e};
  }

  std::pair<Mat<S>, Vec<S>> forward_plain(const Mat<S>& x) const {
    auto lrelu = [](const Mat<S>& m) { return Mat<S>(m.array().max(S(0.01) * m.array())); };
    Mat<S> h = lrelu(input.apply_plain(x));
    Mat<S> hd = h;
    for (const auto& b : depth_blocks) hd = b.apply_plain(hd);
    Mat<S> d = depth_out.apply_plain(hd);
    Mat<S> he = h;
    for (const auto& b : elev_blocks) he = b.apply_plain(he);
    Mat<S> e = elev_out.apply_plain(he);
    return {d, Vec<S>(e.col(0))};
  }

  void collect(std::vector<Param<S>*>& out) {
    input.collect(out);
    for (auto& b : depth_blocks) b.collect(out);
    depth_out.collect(out);
    for (auto& b : elev_blocks) b.collect(out);
    elev_out.collect(out);
  }
};

/// Lifted batch: depth offsets, elevation, clipped depths, 3D pose.
template <class S>
struct LiftGraph {
  Val<S> d;  // [B x J]
  Val<S> e;  // [B x 1]
  Val<S> w;  // [B x J], w = max(d + D, 1)
  Val<S> y;  // [B x 3J]
};

template <class S>
LiftGraph<S> lift(Tape<S>& t, std::type_identity_t<Bindings<S>*> bs, LifterNet<S>& net,
                  Val<S> x, S depth) {
  LiftGraph<S> out;
  auto [d, e] = net.forward(t, bs, x);
  out.d = d;
  out.e = e;
  out.w = t.clamp_min(t.add_scalar(d, depth), S(1));
  out.y = g_unproject(t, x, out.w);
  return out;
}

template <class S>
struct LiftPlain {
  Mat<S> d;
  Vec<S> e;
  Mat<S> w;
  Mat<S> y;
};

template <class S>
LiftPlain<S> lift_plain(const LifterNet<S>& net, const Mat<S>& x, S depth) {
  LiftPlain<S> out;
  auto [d, e] = net.forward_plain(x);
  out.d = d;
  out.e = e;
  out.w = (d.array() + depth).max(S(1));
  int J = net.joints;
  out.y.resize(x.rows(), 3 * J);
  out.y.leftCols(J) = x.leftCols(J).cwiseProduct(out.w);
  out.y.middleCols(J, J) = x.middleCols(J, J).cwiseProduct(out.w);
  out.y.rightCols(J) = out.w;
  return out;
}

}  // namespace poselift

#endif  // POSELIFT_LIFTER_HPP_
