#ifndef POSELIFT_GRADCHECK_HPP_
#define POSELIFT_GRADCHECK_HPP_

#include <algorithm>
#include <functional>
#include <vector>

#include "poselift/tensor.hpp"

namespace poselift {

/// Central finite differences vs. tape gradients.
///
/// `build` receives a fresh tape plus one leaf per input matrix and must
/// return a scalar Val. Returns max over all coordinates of
/// |g_fd - g_ad| / max(1, |g_fd|).
template <class S>
S grad_check(
    const std::function<Val<S>(Tape<S>&, const std::vector<Val<S>>&)>& build,
    std::vector<Mat<S>> points, S eps) {
  std::vector<Mat<S>> ad_grads;
  {
    Tape<S> tape;
    std::vector<Val<S>> leaves;
    leaves.reserve(points.size());
    for (const auto& p : points) leaves.push_back(tape.leaf(p));
    Val<S> loss = build(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves) ad_grads.push_back(tape.grad(l));
  }

  auto eval = [&](const std::vector<Mat<S>>& pts) -> S {
    Tape<S> tape;
    std::vector<Val<S>> leaves;
    for (const auto& p : pts) leaves.push_back(tape.constant(p));
    return tape.value(build(tape, leaves))(0, 0);
  };

  S max_err = S(0);
  for (std::size_t k = 0; k < points.size(); ++k) {
    for (Eigen::Index j = 0; j < points[k].cols(); ++j) {
      for (Eigen::Index i = 0; i < points[k].rows(); ++i) {
        S orig = points[k](i, j);
        points[k](i, j) = orig + eps;
        S up = eval(points);
        points[k](i, j) = orig - eps;
        S down = eval(points);
        points[k](i, j) = orig;
        S fd = (up - down) / (S(2) * eps);
        S ad = ad_grads[k](i, j);
        S err = std::abs(fd - ad) / std::max(S(1), std::abs(fd));
        max_err = std::max(max_err, err);
      }
    }
  }
  return max_err;
}

/// Finite-difference check of d(loss)/d(param entries) against an
/// AD-computed gradient, for loss functions that close over model state.
/// `eval` must be pure (same value on repeated calls).
template <class S>
S grad_check_entries(const std::function<S()>& eval, Mat<S>& storage,
                     const Mat<S>& ad_grad, S eps) {
  S max_err = S(0);
  for (Eigen::Index j = 0; j < storage.cols(); ++j) {
    for (Eigen::Index i = 0; i < storage.rows(); ++i) {
      S orig = storage(i, j);
      storage(i, j) = orig + eps;
      S up = eval();
      storage(i, j) = orig - eps;
      S down = eval();
      storage(i, j) = orig;
      S fd = (up - down) / (S(2) * eps);
      S err = std::abs(fd - ad_grad(i, j)) / std::max(S(1), std::abs(fd));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace poselift

#endif  // POSELIFT_GRADCHECK_HPP_
