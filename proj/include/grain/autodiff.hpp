#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grain/rng.hpp"
#include "grain/tensor.hpp"

namespace grain {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

/// Define-by-run record of executed operations. Nodes are appended in
/// execution order, so the vector order is already a topological order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, false); }
  Var variable(Tensor value) { return push(std::move(value), {}, nullptr, true); }

  /// Appends an op result. The node only tracks gradients when some input does.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      check_owner(v);
      ids.push_back(v.id);
      needs = needs || nodes_[v.id].requires_grad;
    }
    return push(std::move(value), std::move(ids), needs ? std::move(backward) : nullptr, needs);
  }

  const Tensor& value(Var v) const {
    check_owner(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var v) const {
    check_owner(v);
    return nodes_[v.id].requires_grad;
  }

  const std::vector<std::size_t>& inputs(Var v) const {
    check_owner(v);
    return nodes_[v.id].inputs;
  }

  /// Adds `g` into the gradient slot of node `id` when that node is tracked.
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }
  void accumulate(Var v, const Tensor& g) { accumulate(v.id, g); }

  /// Reverse sweep from a scalar output.
  void backward(Var out) {
    check_owner(out);
    const Tensor& y = nodes_[out.id].value;
    if (y.size() != 1) {
      throw ShapeError("backward: output must be scalar, got shape " + y.shape_string());
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    visits_ = 0;
    accumulate(out.id, Tensor(y.rows(), y.cols(), 1.0));
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      ++visits_;
      if (n.backward) n.backward(*this, n.grad);
    }
  }

  /// Gradient of the last backward() output w.r.t. `v`; zeros if unreached.
  Tensor grad(Var v) const {
    check_owner(v);
    const Node& n = nodes_[v.id];
    if (!n.has_grad) return Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t last_backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, Backward backward, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(inputs), std::move(backward),
                          requires_grad, false});
    return Var{this, nodes_.size() - 1};
  }

  void check_owner(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) {
      throw std::logic_error("Var does not belong to this tape");
    }
  }

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Tensor out = kernels::matmul(a.value(), b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, kernels::matmul_nt(g, b.value()));
    if (tp.requires_grad(b)) tp.accumulate(b, kernels::matmul_tn(a.value(), g));
  });
}

/// Elementwise sum. `b` may also be a 1 x cols row broadcast over the rows of `a`.
inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = !av.same_shape(bv) && bv.rows() == 1 && bv.cols() == av.cols();
  if (!av.same_shape(bv) && !broadcast) {
    throw ShapeError("add: shape mismatch " + av.shape_string() + " vs " + bv.shape_string());
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    auto brow = bv.row(broadcast ? 0 : i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += brow[j];
  }
  return t.record(std::move(out), {a, b}, [a, b, broadcast](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    if (!tp.requires_grad(b)) return;
    if (!broadcast) {
      tp.accumulate(b, g);
      return;
    }
    Tensor gb(1, g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
    tp.accumulate(b, gb);
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& x : out.data()) x *= s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape& tp, const Tensor& g) {
    Tensor ga = g;
    for (double& x : ga.data()) x *= s;
    tp.accumulate(a, ga);
  });
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  Tensor::require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (tp.requires_grad(a)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(b)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
      tp.accumulate(b, gb);
    }
  });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (!(av[i] > 0.0)) ga[i] = 0.0;
    tp.accumulate(a, ga);
  });
}

inline Var tanh(Var a) {
  Tensor out = a.value();
  for (double& x : out.data()) x = std::tanh(x);
  Tensor y = out;
  return a.tape->record(std::move(out), {a}, [a, yv = std::move(y)](Tape& tp, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 1.0 - yv[i] * yv[i];
    tp.accumulate(a, ga);
  });
}

/// Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is identity.
inline Var dropout(Var a, double p, SeededRng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: p must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(a.value().rows(), a.value().cols());
  for (double& m : mask.data()) m = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return a.tape->record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& tp, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= mask[i];
    tp.accumulate(a, ga);
  });
}

/// Row-wise log-softmax.
inline Var log_softmax(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto x = av.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    const double lse = m + std::log(s);
    auto y = out.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] - lse;
  }
  Tensor y = out;
  return a.tape->record(std::move(out), {a}, [a, y = std::move(y)](Tape& tp, const Tensor& g) {
    Tensor ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) gs += g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = g(i, j) - std::exp(y(i, j)) * gs;
    }
    tp.accumulate(a, ga);
  });
}

/// Mean negative log-likelihood over the selected rows of a log-probability matrix.
inline Var nll_loss(Var log_probs, std::span<const std::size_t> rows,
                    std::span<const int> labels) {
  const Tensor& lp = log_probs.value();
  if (rows.empty()) throw std::invalid_argument("nll_loss: empty row selection");
  if (labels.size() != lp.rows()) {
    throw ShapeError("nll_loss: " + std::to_string(labels.size()) + " labels for log-probs " +
                     lp.shape_string());
  }
  double total = 0.0;
  for (std::size_t r : rows) {
    const int c = labels[r];
    if (r >= lp.rows() || c < 0 || static_cast<std::size_t>(c) >= lp.cols()) {
      throw std::out_of_range("nll_loss: row or class id out of range");
    }
    total -= lp(r, static_cast<std::size_t>(c));
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  std::vector<std::size_t> rs(rows.begin(), rows.end());
  std::vector<int> ls(labels.begin(), labels.end());
  return log_probs.tape->record(
      Tensor::scalar(total * inv), {log_probs},
      [log_probs, rs = std::move(rs), ls = std::move(ls), inv](Tape& tp, const Tensor& g) {
        const Tensor& lpv = log_probs.value();
        Tensor ga(lpv.rows(), lpv.cols());
        for (std::size_t r : rs) ga(r, static_cast<std::size_t>(ls[r])) -= g.item() * inv;
        tp.accumulate(log_probs, ga);
      });
}

/// Mean squared error over all entries.
inline Var mse(Var pred, Var target) {
  Tensor::require_same_shape(pred.value(), target.value(), "mse");
  const Tensor& p = pred.value();
  const Tensor& q = target.value();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
  const double inv = 1.0 / static_cast<double>(p.size());
  return pred.tape->record(Tensor::scalar(s * inv), {pred, target},
                           [pred, target, inv](Tape& tp, const Tensor& g) {
                             const Tensor& p = pred.value();
                             const Tensor& q = target.value();
                             Tensor gp(p.rows(), p.cols());
                             for (std::size_t i = 0; i < p.size(); ++i)
                               gp[i] = 2.0 * inv * g.item() * (p[i] - q[i]);
                             if (tp.requires_grad(pred)) tp.accumulate(pred, gp);
                             if (tp.requires_grad(target)) {
                               for (double& x : gp.data()) x = -x;
                               tp.accumulate(target, gp);
                             }
                           });
}

/// Joins two matrices side by side, row by row: [a | b].
inline Var concat(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat: row counts differ " + av.shape_string() + " vs " +
                     bv.shape_string());
  }
  const std::size_t ca = av.cols();
  const std::size_t cb = bv.cols();
  Tensor out(av.rows(), ca + cb);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto o = out.row(i);
    std::copy(av.row(i).begin(), av.row(i).end(), o.begin());
    std::copy(bv.row(i).begin(), bv.row(i).end(), o.begin() + static_cast<std::ptrdiff_t>(ca));
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, ca, cb](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) {
      Tensor ga(g.rows(), ca);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(b)) {
      Tensor gb(g.rows(), cb);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
      tp.accumulate(b, gb);
    }
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& tp, const Tensor& g) {
    tp.accumulate(a, Tensor(a.value().rows(), a.value().cols(), g.item()));
  });
}

inline Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// x * W + b with b a 1 x out row.
inline Var affine(Var x, Var w, Var b) { return add(matmul(x, w), b); }

}  // namespace grain
