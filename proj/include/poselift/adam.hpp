#ifndef POSELIFT_ADAM_HPP_
#define POSELIFT_ADAM_HPP_

#include <cmath>
#include <map>
#include <utility>
#include <vector>
#include <stdexcept>
#include <string>

#include "poselift/nn.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

template <class S>
struct AdamConfig {
  S lr = S(1e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  S weight_decay = S(0);
  /// false: classic L2 decay added to the gradient. true: decoupled decay
  /// applied directly to the weights.
  bool decoupled_decay = false;
  /// Global-norm gradient clip applied before the update; 0 disables.
  S grad_clip_norm = S(0);
};

/// Per-parameter first/second moment buffers, keyed by parameter name.
template <class S>
struct AdamState {
  long step = 0;
  struct Moments {
    Mat<S> m;
    Mat<S> v;
  };
  std::map<std::string, Moments> moments;
};

/// Sums tape gradients per parameter. A parameter bound several times in one
/// graph (e.g. a network applied twice in the same loss) contributes the sum
/// of its binding gradients.
template <class S>
std::vector<std::pair<Param<S>*, Mat<S>>> coalesce_grads(Tape<S>& tape,
                                                         const Bindings<S>& bindings) {
  std::vector<std::pair<Param<S>*, Mat<S>>> out;
  std::map<Param<S>*, std::size_t> index;
  for (const auto& b : bindings) {
    auto [it, fresh] = index.try_emplace(b.param, out.size());
    if (fresh)
      out.emplace_back(b.param, tape.grad(b.node));
    else
      out[it->second].second += tape.grad(b.node);
  }
  return out;
}

/// One Adam update over the bound parameters; gradients are read from the
/// tape. Throws before touching any parameter if a gradient is non-finite.
template <class S>
void adam_step(Tape<S>& tape, const Bindings<S>& bindings, AdamState<S>& state,
               const AdamConfig<S>& cfg) {
  auto grads = coalesce_grads(tape, bindings);
  for (const auto& [p, g] : grads) {
    if (!g.allFinite())
      throw std::runtime_error("adam_step: non-finite gradient for parameter '" +
                               p->name + "'");
  }
  if (cfg.grad_clip_norm > S(0)) {
    double sq = 0;
    for (const auto& [p, g] : grads) sq += double(g.squaredNorm());
    double norm = std::sqrt(sq);
    if (norm > double(cfg.grad_clip_norm)) {
      S scale = S(double(cfg.grad_clip_norm) / norm);
      for (auto& [p, g] : grads) g *= scale;
    }
  }
  state.step += 1;
  S bc1 = S(1) - S(std::pow(double(cfg.beta1), double(state.step)));
  S bc2 = S(1) - S(std::pow(double(cfg.beta2), double(state.step)));
  for (auto& [param, grad] : grads) {
    Mat<S>& w = param->value;
    Mat<S> g = grad;
    if (cfg.weight_decay != S(0) && !cfg.decoupled_decay) g += cfg.weight_decay * w;
    auto& mo = state.moments[param->name];
    if (mo.m.size() == 0) {
      mo.m.setZero(w.rows(), w.cols());
      mo.v.setZero(w.rows(), w.cols());
    }
    if (mo.m.rows() != w.rows() || mo.m.cols() != w.cols())
      throw std::runtime_error("adam_step: moment shape mismatch for '" + param->name + "'");
    mo.m = cfg.beta1 * mo.m + (S(1) - cfg.beta1) * g;
    mo.v = cfg.beta2 * mo.v + (S(1) - cfg.beta2) * g.cwiseProduct(g);
    Mat<S> mhat = mo.m / bc1;
    Mat<S> vhat = mo.v / bc2;
    if (cfg.weight_decay != S(0) && cfg.decoupled_decay) w -= cfg.lr * cfg.weight_decay * w;
    w.array() -= cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.eps);
  }
}

}  // namespace poselift

#endif  // POSELIFT_ADAM_HPP_
