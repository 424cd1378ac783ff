#ifndef POSELIFT_TENSOR_HPP_
#define POSELIFT_TENSOR_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace poselift {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <class S>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid until the tape is cleared.
template <class S>
struct Val {
  Tape<S>* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Define-by-run reverse-mode tape over dense 2D float matrices.
///
/// Values are batch-major: rows index samples, columns index features.
/// Scalars live as 1x1 matrices. Elementwise binary ops broadcast a
/// dimension of size 1 against any size, numpy-style; the corresponding
/// gradient is summed back over the broadcast dimension.
template <class S>
class Tape {
 public:
  using M = Mat<S>;

  Val<S> leaf(const M& v) { return push(v, true, {}); }
  Val<S> constant(const M& v) { return push(v, false, {}); }
  Val<S> scalar(S x) {
    M m(1, 1);
    m(0, 0) = x;
    return constant(m);
  }

  const M& value(Val<S> v) const { return nodes_[check(v)].value; }
  const M& grad(Val<S> v) const { return nodes_[check(v)].grad; }
  bool requires_grad(Val<S> v) const { return nodes_[check(v)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  /// Backpropagates from a 1x1 loss node through the whole tape.
  void backward(Val<S> loss) {
    auto& ln = nodes_[check(loss)];
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw ShapeError("backward expects a scalar loss, got " +
                       shape_str(ln.value.rows(), ln.value.cols()));
    ln.grad.setOnes(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward) n.backward(n.grad);
    }
  }

  // ---- elementwise binary ops (broadcasting) ----

  Val<S> add(Val<S> a, Val<S> b) {
    return binary(a, b, [](S x, S y) { return x + y; },
                  [](const M& g, const M&, const M&) { return g; },
                  [](const M& g, const M&, const M&) { return g; });
  }
  Val<S> sub(Val<S> a, Val<S> b) {
    return binary(a, b, [](S x, S y) { return x - y; },
                  [](const M& g, const M&, const M&) { return g; },
                  [](const M& g, const M&, const M&) { return M(-g); });
  }
  Val<S> mul(Val<S> a, Val<S> b) {
    return binary(a, b, [](S x, S y) { return x * y; },
                  [](const M& g, const M&, const M& yb) { return M(g.cwiseProduct(yb)); },
                  [](const M& g, const M& xb, const M&) { return M(g.cwiseProduct(xb)); });
  }
  Val<S> div(Val<S> a, Val<S> b) {
    return binary(a, b, [](S x, S y) { return x / y; },
                  [](const M& g, const M&, const M& yb) { return M(g.cwiseQuotient(yb)); },
                  [](const M& g, const M& xb, const M& yb) {
                    return M(-g.cwiseProduct(xb).cwiseQuotient(yb.cwiseProduct(yb)));
                  });
  }

  // ---- matmul ----

  Val<S> matmul(Val<S> a, Val<S> b) {
    const M& x = value(a);
    const M& y = value(b);
    if (x.cols() != y.rows())
      throw ShapeError("matmul shape mismatch: " + shape_str(x.rows(), x.cols()) +
                       " * " + shape_str(y.rows(), y.cols()));
    M out = x * y;
    return push(out, requires_grad(a) || requires_grad(b), {a, b},
                [this, a, b](const M& g) {
                  if (nodes_[a.id].needs_grad) nodes_[a.id].grad.noalias() += g * nodes_[b.id].value.transpose();
                  if (nodes_[b.id].needs_grad) nodes_[b.id].grad.noalias() += nodes_[a.id].value.transpose() * g;
                });
  }

  // ---- elementwise unary ops ----

  Val<S> exp(Val<S> a) {
    M out = value(a).array().exp();
    return unary_from_out(a, out, [](const M& g, const M&, const M& y) { return M(g.cwiseProduct(y)); });
  }
  Val<S> log(Val<S> a) {
    M out = value(a).array().log();
    return unary(a, out, [](const M& g, const M& x) { return M(g.cwiseQuotient(x)); });
  }
  Val<S> sqrt(Val<S> a) {
    M out = value(a).array().sqrt();
    return unary_from_out(a, out, [](const M& g, const M&, const M& y) {
      return M(g.array() / (S(2) * y.array()));
    });
  }
  Val<S> square(Val<S> a) {
    M out = value(a).array().square();
    return unary(a, out, [](const M& g, const M& x) { return M(S(2) * g.cwiseProduct(x)); });
  }
  Val<S> tanh(Val<S> a) {
    M out = value(a).array().tanh();
    return unary_from_out(a, out, [](const M& g, const M&, const M& y) {
      return M(g.array() * (S(1) - y.array().square()));
    });
  }
  Val<S> sin(Val<S> a) {
    M out = value(a).array().sin();
    return unary(a, out, [](const M& g, const M& x) { return M(g.array() * x.array().cos()); });
  }
  Val<S> cos(Val<S> a) {
    M out = value(a).array().cos();
    return unary(a, out, [](const M& g, const M& x) { return M(-g.array() * x.array().sin()); });
  }
  Val<S> abs(Val<S> a) {
    M out = value(a).array().abs();
    return unary(a, out, [](const M& g, const M& x) { return M(g.array() * x.array().sign()); });
  }
  Val<S> neg(Val<S> a) {
    M out = -value(a);
    return unary(a, out, [](const M& g, const M&) { return M(-g); });
  }
  Val<S> scale(Val<S> a, S c) {
    M out = c * value(a);
    return unary(a, out, [c](const M& g, const M&) { return M(c * g); });
  }
  Val<S> add_scalar(Val<S> a, S c) {
    M out = value(a).array() + c;
    return unary(a, out, [](const M& g, const M&) { return g; });
  }
  Val<S> relu(Val<S> a) {
    M out = value(a).cwiseMax(S(0));
    return unary(a, out, [](const M& g, const M& x) {
      return M(g.array() * (x.array() > S(0)).template cast<S>());
    });
  }
  Val<S> leaky_relu(Val<S> a, S slope = S(0.01)) {
    const M& x = value(a);
    M out = x.array().max(slope * x.array());
    return unary(a, out, [slope](const M& g, const M& x2) {
      Mat<S> pos = (x2.array() > S(0)).template cast<S>();
      return M(g.array() * (pos.array() + slope * (S(1) - pos.array())));
    });
  }
  /// clamp_min passes zero gradient where the input was clamped.
  Val<S> clamp_min(Val<S> a, S lo) {
    M out = value(a).cwiseMax(lo);
    return unary(a, out, [lo](const M& g, const M& x) {
      return M(g.array() * (x.array() > lo).template cast<S>());
    });
  }
  /// Identity forward, zero gradient. Cuts the graph.
  Val<S> detach(Val<S> a) { return constant(value(a)); }

  // ---- reductions ----

  Val<S> sum(Val<S> a) {
    M out(1, 1);
    out(0, 0) = value(a).sum();
    return unary(a, out, [](const M& g, const M& x) {
      return M(g(0, 0) * Mat<S>::Ones(x.rows(), x.cols()));
    });
  }
  Val<S> mean(Val<S> a) {
    const M& x = value(a);
    S n = S(x.size());
    M out(1, 1);
    out(0, 0) = x.sum() / n;
    return unary(a, out, [n](const M& g, const M& x2) {
      return M((g(0, 0) / n) * Mat<S>::Ones(x2.rows(), x2.cols()));
    });
  }
  /// Sum over columns: [B x F] -> [B x 1].
  Val<S> row_sum(Val<S> a) {
    M out = value(a).rowwise().sum();
    return unary(a, out, [](const M& g, const M& x) {
      return M(g * Mat<S>::Ones(1, x.cols()));
    });
  }
  Val<S> row_mean(Val<S> a) {
    Val<S> s = row_sum(a);
    return scale(s, S(1) / S(value(a).cols()));
  }
  /// Sum over rows: [B x F] -> [1 x F].
  Val<S> col_sum(Val<S> a) {
    M out = value(a).colwise().sum();
    return unary(a, out, [](const M& g, const M& x) {
      return M(Mat<S>::Ones(x.rows(), 1) * g);
    });
  }
  Val<S> col_mean(Val<S> a) {
    Val<S> s = col_sum(a);
    return scale(s, S(1) / S(value(a).rows()));
  }

  // ---- structural ops (last dim = columns) ----

  Val<S> concat_cols(std::span<const Val<S>> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    bool req = false;
    for (auto p : parts) {
      if (value(p).rows() != rows)
        throw ShapeError("concat_cols row mismatch: " +
                         shape_str(rows, value(parts[0]).cols()) + " vs " +
                         shape_str(value(p).rows(), value(p).cols()));
      cols += value(p).cols();
      req = req || requires_grad(p);
    }
    M out(rows, cols);
    Eigen::Index off = 0;
    for (auto p : parts) {
      out.middleCols(off, value(p).cols()) = value(p);
      off += value(p).cols();
    }
    std::vector<Val<S>> ps(parts.begin(), parts.end());
    return push(out, req, ps, [this, ps](const M& g) {
      Eigen::Index off2 = 0;
      for (auto p : ps) {
        Eigen::Index c = nodes_[p.id].value.cols();
        if (nodes_[p.id].needs_grad) nodes_[p.id].grad += g.middleCols(off2, c);
        off2 += c;
      }
    });
  }
  Val<S> concat_cols(std::initializer_list<Val<S>> parts) {
    std::vector<Val<S>> v(parts);
    return concat_cols(std::span<const Val<S>>(v));
  }
  Val<S> slice_cols(Val<S> a, Eigen::Index start, Eigen::Index n) {
    const M& x = value(a);
    if (start < 0 || n < 0 || start + n > x.cols())
      throw ShapeError("slice_cols [" + std::to_string(start) + "," +
                       std::to_string(start + n) + ") out of range for " +
                       shape_str(x.rows(), x.cols()));
    M out = x.middleCols(start, n);
    return push(out, requires_grad(a), {a}, [this, a, start, n](const M& g) {
      if (nodes_[a.id].needs_grad) nodes_[a.id].grad.middleCols(start, n) += g;
    });
  }
  /// Circular shift of rows by k (row i of the output is row (i+k) mod B).
  Val<S> roll_rows(Val<S> a, Eigen::Index k) {
    const M& x = value(a);
    Eigen::Index b = x.rows();
    k = ((k % b) + b) % b;
    M out(b, x.cols());
    for (Eigen::Index i = 0; i < b; ++i) out.row(i) = x.row((i + k) % b);
    return push(out, requires_grad(a), {a}, [this, a, k, b](const M& g) {
      if (!nodes_[a.id].needs_grad) return;
      for (Eigen::Index i = 0; i < b; ++i) nodes_[a.id].grad.row((i + k) % b) += g.row(i);
    });
  }

  /// Column selection by index; duplicate indices accumulate gradient.
  Val<S> gather_cols(Val<S> a, const std::vector<int>& idx) {
    const M& x = value(a);
    M out(x.rows(), Eigen::Index(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= x.cols())
        throw ShapeError("gather_cols index " + std::to_string(idx[i]) +
                         " out of range for " + shape_str(x.rows(), x.cols()));
      out.col(Eigen::Index(i)) = x.col(idx[i]);
    }
    return push(out, requires_grad(a), {a}, [this, a, idx](const M& g) {
      if (!nodes_[a.id].needs_grad) return;
      for (std::size_t i = 0; i < idx.size(); ++i)
        nodes_[a.id].grad.col(idx[i]) += g.col(Eigen::Index(i));
    });
  }

 private:
  struct Node {
    M value;
    M grad;
    bool needs_grad = false;
    std::function<void(const M&)> backward;
  };

  int check(Val<S> v) const {
    if (v.tape != this || v.id < 0 || v.id >= int(nodes_.size()))
      throw std::logic_error("Val does not belong to this tape");
    return v.id;
  }

  Val<S> push(const M& v, bool needs_grad, const std::vector<Val<S>>& parents,
              std::function<void(const M&)> bw = nullptr) {
    for (auto p : parents) check(p);
    Node n;
    n.value = v;
    n.needs_grad = needs_grad;
    if (needs_grad) {
      n.grad.setZero(v.rows(), v.cols());
      n.backward = std::move(bw);
    }
    nodes_.push_back(std::move(n));
    return {this, int(nodes_.size()) - 1};
  }

  static bool broadcastable(Eigen::Index a, Eigen::Index b) {
    return a == b || a == 1 || b == 1;
  }

  static M broadcast(const M& x, Eigen::Index r, Eigen::Index c) {
    if (x.rows() == r && x.cols() == c) return x;
    M out(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i)
        out(i, j) = x(x.rows() == 1 ? 0 : i, x.cols() == 1 ? 0 : j);
    return out;
  }

  /// Sums gradient over dimensions that were broadcast.
  static M reduce_to(const M& g, Eigen::Index r, Eigen::Index c) {
    M out = g;
    if (out.rows() != r) out = M(out.colwise().sum());
    if (out.cols() != c) out = M(out.rowwise().sum());
    return out;
  }

  template <class F, class Ga, class Gb>
  Val<S> binary(Val<S> a, Val<S> b, F f, Ga ga, Gb gb) {
    const M& x = value(a);
    const M& y = value(b);
    if (!broadcastable(x.rows(), y.rows()) || !broadcastable(x.cols(), y.cols()))
      throw ShapeError("elementwise shape mismatch: " + shape_str(x.rows(), x.cols()) +
                       " vs " + shape_str(y.rows(), y.cols()));
    Eigen::Index r = std::max(x.rows(), y.rows());
    Eigen::Index c = std::max(x.cols(), y.cols());
    M xb = broadcast(x, r, c);
    M yb = broadcast(y, r, c);
    M out = xb.binaryExpr(yb, f);
    bool req = requires_grad(a) || requires_grad(b);
    return push(out, req, {a, b}, [this, a, b, ga, gb, xb, yb](const M& g) {
      Node& na = nodes_[a.id];
      Node& nb = nodes_[b.id];
      if (na.needs_grad)
        na.grad += reduce_to(ga(g, xb, yb), na.value.rows(), na.value.cols());
      if (nb.needs_grad)
        nb.grad += reduce_to(gb(g, xb, yb), nb.value.rows(), nb.value.cols());
    });
  }

  template <class G>
  Val<S> unary(Val<S> a, const M& out, G gfn) {
    return push(out, requires_grad(a), {a}, [this, a, gfn](const M& g) {
      nodes_[a.id].grad += gfn(g, nodes_[a.id].value);
    });
  }

  /// Unary op whose gradient is cheaper in terms of the output value.
  template <class G>
  Val<S> unary_from_out(Val<S> a, const M& out, G gfn) {
    Val<S> v = push(out, requires_grad(a), {a});
    if (requires_grad(a)) {
      int vid = v.id;
      nodes_[vid].backward = [this, a, vid, gfn](const M& g) {
        nodes_[a.id].grad += gfn(g, nodes_[a.id].value, nodes_[vid].value);
      };
    }
    return v;
  }

  std::vector<Node> nodes_;
};

// Convenience composites.

template <class S>
Val<S> l2_norm(Tape<S>& t, Val<S> a) {
  return t.sqrt(t.sum(t.square(a)));
}

template <class S>
Val<S> l1_norm(Tape<S>& t, Val<S> a) {
  return t.sum(t.abs(a));
}

}  // namespace poselift

#endif  // POSELIFT_TENSOR_HPP_
