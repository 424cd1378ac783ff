#ifndef POSELIFT_NN_HPP_
#define POSELIFT_NN_HPP_

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "poselift/tensor.hpp"

namespace poselift {

/// A named trainable matrix. Models own their Params; a forward pass binds
/// them onto the tape and records the binding so the optimizer can read
/// gradients afterwards.
template <class S>
struct Param {
  std::string name;
  Mat<S> value;
};

template <class S>
struct Binding {
  Param<S>* param;
  Val<S> node;
};

template <class S>
using Bindings = std::vector<Binding<S>>;

template <class S>
Val<S> bind(Tape<S>& tape, Bindings<S>* bindings, Param<S>& p) {
  if (bindings == nullptr) return tape.constant(p.value);  // frozen
  Val<S> v = tape.leaf(p.value);
  bindings->push_back({&p, v});
  return v;
}

/// Fully connected layer, y = x W + b, with fan-in-scaled uniform init.
template <class S>
struct Linear {
  Param<S> W;
  Param<S> b;

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng,
         bool zero_init = false) {
    W.name = name + ".W";
    b.name = name + ".b";
    W.value.setZero(in, out);
    b.value.setZero(1, out);
    if (!zero_init) {
      S bound = S(1) / std::sqrt(S(in));
      std::uniform_real_distribution<double> dist(-double(bound), double(bound));
      for (Eigen::Index j = 0; j < W.value.cols(); ++j)
        for (Eigen::Index i = 0; i < W.value.rows(); ++i)
          W.value(i, j) = S(dist(rng));
    }
  }

  Val<S> apply(Tape<S>& t, Bindings<S>* bs, Val<S> x) {
    Val<S> w = bind(t, bs, W);  // bind order fixed: W then b
    Val<S> bias = bind(t, bs, b);
    return t.add(t.matmul(x, w), bias);
  }

  Mat<S> apply_plain(const Mat<S>& x) const {
    return (x * W.value).rowwise() + b.value.row(0);
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&W);
    out.push_back(&b);
  }
};

}  // namespace poselift

#endif  // POSELIFT_NN_HPP_
