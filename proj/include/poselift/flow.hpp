#ifndef POSELIFT_FLOW_HPP_
#define POSELIFT_FLOW_HPP_

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "poselift/nn.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

/// Soft clamp applied to the scale outputs before exponentiation,
/// alpha * tanh(s / alpha). Keeps exp(s) bounded early in training.
constexpr double kScaleClampAlpha = 5.0;

/// One affine coupling block: a fixed permutation, then
/// v2 = exp(s(u1)) * u2 + t(u1), v1 = u1, with log-det = sum_j s(u1)_j.
template <class S>
struct CouplingBlock {
  std::vector<int> perm;
  std::vector<int> inv_perm;
  int n1 = 0, n2 = 0;
  Linear<S> s1, s2, s3;  // s subnetwork: n1 -> hidden -> hidden -> n2
  Linear<S> t1, t2, t3;  // t subnetwork, same shape

  CouplingBlock() = default;
  CouplingBlock(const std::string& name, int dim, int hidden, std::mt19937_64& rng) {
    perm.resize(dim);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    build_inverse();
    n1 = (dim + 1) / 2;
    n2 = dim - n1;
    // Zero-initialized last layers make the whole block start as identity.
    s1 = Linear<S>(name + ".s1", n1, hidden, rng);
    s2 = Linear<S>(name + ".s2", hidden, hidden, rng);
    s3 = Linear<S>(name + ".s3", hidden, n2, rng, /*zero_init=*/true);
    t1 = Linear<S>(name + ".t1", n1, hidden, rng);
    t2 = Linear<S>(name + ".t2", hidden, hidden, rng);
    t3 = Linear<S>(name + ".t3", hidden, n2, rng, /*zero_init=*/true);
  }

  void build_inverse() {
    inv_perm.assign(perm.size(), 0);
    for (int i = 0; i < int(perm.size()); ++i) inv_perm[perm[i]] = i;
  }

  int dim() const { return n1 + n2; }

  Val<S> subnet(Tape<S>& t, Bindings<S>* bs, Linear<S>& l1, Linear<S>& l2,
                Linear<S>& l3, Val<S> x) {
    Val<S> h = t.relu(l1.apply(t, bs, x));
    h = t.relu(l2.apply(t, bs, h));
    return l3.apply(t, bs, h);
  }

  Mat<S> subnet_plain(const Linear<S>& l1, const Linear<S>& l2, const Linear<S>& l3,
                      const Mat<S>& x) const {
    Mat<S> h = l1.apply_plain(x).cwiseMax(S(0));
    h = l2.apply_plain(h).cwiseMax(S(0));
    return l3.apply_plain(h);
  }

  /// Returns (v, per-sample log-det [B x 1]).
  std::pair<Val<S>, Val<S>> forward(Tape<S>& t, Bindings<S>* bs, Val<S> u) {
    Val<S> up = t.gather_cols(u, perm);
    Val<S> u1 = t.slice_cols(up, 0, n1);
    Val<S> u2 = t.slice_cols(up, n1, n2);
    Val<S> s_raw = subnet(t, bs, s1, s2, s3, u1);
    Val<S> s = t.scale(t.tanh(t.scale(s_raw, S(1.0 / kScaleClampAlpha))), S(kScaleClampAlpha));
    Val<S> tt = subnet(t, bs, t1, t2, t3, u1);
    Val<S> v2 = t.add(t.mul(t.exp(s), u2), tt);
    Val<S> v = t.concat_cols({u1, v2});
    return {v, t.row_sum(s)};
  }

  std::pair<Mat<S>, Vec<S>> forward_plain(const Mat<S>& u) const {
    Mat<S> up(u.rows(), u.cols());
    for (int i = 0; i < int(perm.size()); ++i) up.col(i) = u.col(perm[i]);
    Mat<S> u1 = up.leftCols(n1);
    Mat<S> u2 = up.rightCols(n2);
    Mat<S> s = clamp_scale(subnet_plain(s1, s2, s3, u1));
    Mat<S> tt = subnet_plain(t1, t2, t3, u1);
    Mat<S> v(u.rows(), u.cols());
    v.leftCols(n1) = u1;
    v.rightCols(n2) = s.array().exp() * u2.array() + tt.array();
    return {v, Vec<S>(s.rowwise().sum())};
  }

  Mat<S> inverse_plain(const Mat<S>& v) const {
    Mat<S> v1 = v.leftCols(n1);
    Mat<S> v2 = v.rightCols(n2);
    Mat<S> s = clamp_scale(subnet_plain(s1, s2, s3, v1));
    Mat<S> tt = subnet_plain(t1, t2, t3, v1);
    Mat<S> up(v.rows(), v.cols());
    up.leftCols(n1) = v1;
    up.rightCols(n2) = (v2.array() - tt.array()) * (-s).array().exp();
    Mat<S> u(v.rows(), v.cols());
    for (int i = 0; i < int(perm.size()); ++i) u.col(perm[i]) = up.col(i);
    return u;
  }

  static Mat<S> clamp_scale(const Mat<S>& s) {
    return S(kScaleClampAlpha) * (s / S(kScaleClampAlpha)).array().tanh();
  }

  void collect(std::vector<Param<S>*>& out) {
    s1.collect(out); s2.collect(out); s3.collect(out);
    t1.collect(out); t2.collect(out); t3.collect(out);
  }
};

/// Stack of affine coupling blocks with a standard-normal base density.
template <class S>
struct CouplingFlow {
  std::vector<CouplingBlock<S>> blocks;

  CouplingFlow() = default;
  CouplingFlow(int dim, int num_blocks, int hidden, std::mt19937_64& rng) {
    for (int i = 0; i < num_blocks; ++i)
      blocks.emplace_back("flow.b" + std::to_string(i), dim, hidden, rng);
  }

  int dim() const { return blocks.empty() ? 0 : blocks.front().dim(); }

  /// Per-sample log p(c) [B x 1]. With bs == nullptr the flow weights are
  /// frozen; gradients still flow into c.
  Val<S> log_likelihood(Tape<S>& t, Bindings<S>* bs, Val<S> c) {
    int n = dim();
    Val<S> z = c;
    Val<S> logdet;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      auto [zi, ld] = blocks[i].forward(t, bs, z);
      z = zi;
      logdet = (i == 0) ? ld : t.add(logdet, ld);
      if (!t.value(z).allFinite())
        throw std::runtime_error("flow: non-finite output in block " + std::to_string(i));
    }
    S log2pi = S(std::log(2.0 * std::numbers::pi));
    Val<S> base = t.sub(t.scale(t.row_sum(t.square(z)), S(-0.5)),
                        t.scalar(S(0.5) * S(n) * log2pi));
    return blocks.empty() ? base : t.add(base, logdet);
  }

  Vec<S> log_likelihood_plain(const Mat<S>& c) const {
    Mat<S> z = c;
    Vec<S> logdet = Vec<S>::Zero(c.rows());
    for (const auto& b : blocks) {
      auto [zi, ld] = b.forward_plain(z);
      z = zi;
      logdet += ld;
    }
    S log2pi = S(std::log(2.0 * std::numbers::pi));
    Vec<S> base = -S(0.5) * z.rowwise().squaredNorm().array() - S(0.5) * S(dim()) * log2pi;
    return base + logdet;
  }

  Mat<S> forward_plain(const Mat<S>& c) const {
    Mat<S> z = c;
    for (const auto& b : blocks) z = b.forward_plain(z).first;
    return z;
  }

  Mat<S> inverse_plain(const Mat<S>& z) const {
    Mat<S> c = z;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) c = it->inverse_plain(c);
    return c;
  }

  /// Mean negative log-likelihood over the batch.
  Val<S> nf_loss(Tape<S>& t, Bindings<S>* bs, Val<S> c) {
    return t.neg(t.mean(log_likelihood(t, bs, c)));
  }

  void collect(std::vector<Param<S>*>& out) {
    for (auto& b : blocks) b.collect(out);
  }
};

}  // namespace poselift

#endif  // POSELIFT_FLOW_HPP_
