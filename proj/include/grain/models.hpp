#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grain/autodiff.hpp"
#include "grain/dataset.hpp"
#include "grain/graph.hpp"
#include "grain/optim.hpp"
#include "grain/propagation.hpp"
#include "grain/rng.hpp"

namespace grain {

enum class Mode { train, eval };

/// Per-node continuous hop counts, each in [lo, hi].
struct ActionVector {
  std::vector<double> values;
  double lo = 1.0;
  double hi = 8.0;

  ActionVector() = default;
  ActionVector(std::vector<double> v, double lo_, double hi_) : values(std::move(v)), lo(lo_), hi(hi_) {
    validate();
  }
  static ActionVector constant(std::size_t n, double a, double lo, double hi) {
    return ActionVector(std::vector<double>(n, a), lo, hi);
  }

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }

  void validate() const {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double a = values[i];
      if (!std::isfinite(a) || a < lo || a > hi) {
        throw std::out_of_range("action " + std::to_string(a) + " of node " + std::to_string(i) +
                                " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      }
    }
  }

  friend bool operator==(const ActionVector&, const ActionVector&) = default;
};

/// Nearest integer, halves rounded away from zero (2.5 -> 3).
inline std::size_t rounded_hops(double a) { return static_cast<std::size_t>(std::round(a)); }

/// The two implicit-information weights: (a - floor a, ceil a - a). Both are 0.0 for integer a.
inline std::pair<double, double> fractional_coefficients(double a) {
  return {a - std::floor(a), std::ceil(a) - a};
}

/// Weight of each power Â^k H (k = 0 .. depth) in the granular combination of one node:
///   Z_i = 1/<a> sum_{k=1}^{<a>} [(1 - alpha) Â^k H + alpha H]
///         + (a - floor a) Â^<a> H + (ceil a - a) Â^{<a>+1} H
/// Index 0 carries the alpha self term.
inline std::vector<double> granular_coefficients(double a, double alpha, std::size_t depth) {
  const std::size_t hops = rounded_hops(a);
  if (hops < 1) throw std::out_of_range("granular action must be >= 1, got " + std::to_string(a));
  if (hops + 1 > depth) {
    throw std::out_of_range("propagation depth " + std::to_string(depth) +
                            " insufficient for action " + std::to_string(a));
  }
  std::vector<double> c(depth + 1, 0.0);
  c[0] = alpha;
  const double share = (1.0 - alpha) / static_cast<double>(hops);
  for (std::size_t k = 1; k <= hops; ++k) c[k] += share;
  const auto [lo_w, hi_w] = fractional_coefficients(a);
  c[hops] += lo_w;
  c[hops + 1] += hi_w;
  return c;
}

/// n x (depth + 1) coefficient table for every node.
inline Tensor granular_coefficient_table(const ActionVector& actions, double alpha, std::size_t depth) {
  Tensor t(actions.size(), depth + 1);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const auto c = granular_coefficients(actions[i], alpha, depth);
    std::copy(c.begin(), c.end(), t.row(i).begin());
  }
  return t;
}

/// Combined features of one node from cached powers.
inline void granular_combine_row(const PropagationCache& cache, double a, double alpha, std::size_t i,
                                 std::span<double> out) {
  const auto c = granular_coefficients(a, alpha, cache.depth());
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (c[k] == 0.0) continue;
    auto p = cache.power(k).row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += c[k] * p[j];
  }
}

/// Parameter-shared multi-granularity aggregation of the cached input rows.
inline Tensor granular_combine(const PropagationCache& cache, const ActionVector& actions, double alpha) {
  if (actions.size() != cache.rows()) {
    throw ShapeError("granular_combine: " + std::to_string(actions.size()) + " actions for " +
                     std::to_string(cache.rows()) + " nodes");
  }
  actions.validate();
  Tensor z(cache.rows(), cache.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) granular_combine_row(cache, actions[i], alpha, i, z.row(i));
  return z;
}

namespace detail {
inline void add_scaled_rows(Tensor& acc, const Tensor& p, const Tensor& coeffs, std::size_t k) {
  for (std::size_t i = 0; i < acc.rows(); ++i) {
    const double c = coeffs(i, k);
    if (c == 0.0) continue;
    auto a = acc.row(i);
    auto r = p.row(i);
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += c * r[j];
  }
}
}  // namespace detail

/// Differentiable granular combination of a hidden matrix, propagating on the fly.
/// `coeffs` is the table from granular_coefficient_table; graph and table must
/// outlive the tape.
inline Var granular_propagate(const CsrGraph& g, Var h, const Tensor& coeffs) {
  const Tensor& hv = h.value();
  if (coeffs.rows() != hv.rows()) throw ShapeError("granular_propagate: coefficient rows != node count");
  std::size_t top = 0;
  for (std::size_t i = 0; i < coeffs.rows(); ++i)
    for (std::size_t k = 0; k < coeffs.cols(); ++k)
      if (coeffs(i, k) != 0.0) top = std::max(top, k);

  Tensor z(hv.rows(), hv.cols());
  detail::add_scaled_rows(z, hv, coeffs, 0);
  Tensor p = hv;
  for (std::size_t k = 1; k <= top; ++k) {
    p = spmm(g, p);
    detail::add_scaled_rows(z, p, coeffs, k);
  }
  return h.tape->record(std::move(z), {h}, [&g, &coeffs, h, top](Tape& tp, const Tensor& grad) {
    // Horner form of sum_k Â^k diag(c_k) grad (Â is symmetric).
    Tensor acc(grad.rows(), grad.cols());
    if (top > 0) {
      detail::add_scaled_rows(acc, grad, coeffs, top);
      for (std::size_t k = top - 1; k >= 1; --k) {
        acc = spmm(g, acc);
        detail::add_scaled_rows(acc, grad, coeffs, k);
      }
      acc = spmm(g, acc);
    }
    detail::add_scaled_rows(acc, grad, coeffs, 0);
    tp.accumulate(h, acc);
  });
}

/// Per-node recursive aggregation (no learned weights):
///   h^1 = relu(Â X), h^k = relu(Â h^{k-1}) up to k = <a>,
///   h_v = h^<a>_v / <a> + (a - floor a)(Â h^{<a>-1})_v + (ceil a - a)(Â h^<a>)_v.
inline std::vector<double> reference_aggregate(const CsrGraph& normalized, const Tensor& x, NodeId v, double a) {
  if (v >= normalized.n_nodes) throw std::out_of_range("reference_aggregate: node out of range");
  const std::size_t hops = rounded_hops(a);
  if (hops < 1) throw std::out_of_range("reference_aggregate: action must be >= 1");
  std::vector<Tensor> h{x};
  for (std::size_t k = 1; k <= hops; ++k) {
    Tensor next = spmm(normalized, h.back());
    for (double& e : next.data()) e = std::max(e, 0.0);
    h.push_back(std::move(next));
  }
  auto propagated_row = [&](const Tensor& m) {
    std::vector<double> r(m.cols(), 0.0);
    auto cols = normalized.neighbors(v);
    auto w = normalized.row_weights(v);
    for (std::size_t e = 0; e < cols.size(); ++e) {
      auto src = m.row(cols[e]);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += w[e] * src[j];
    }
    return r;
  };
  const auto [lo_w, hi_w] = fractional_coefficients(a);
  std::vector<double> out(x.cols());
  auto deepest = h[hops].row(v);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = deepest[j] / static_cast<double>(hops);
  if (lo_w != 0.0) {
    const auto r = propagated_row(h[hops - 1]);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += lo_w * r[j];
  }
  if (hi_w != 0.0) {
    const auto r = propagated_row(h[hops]);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += hi_w * r[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classifiers
// ---------------------------------------------------------------------------

/// Glorot-uniform weight matrix.
inline Tensor glorot(std::size_t in, std::size_t out, SeededRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w(in, out);
  for (double& x : w.data()) x = rng.uniform(-limit, limit);
  return w;
}

inline std::vector<Parameter> dense_stack(std::span<const std::size_t> widths, SeededRng& rng) {
  std::vector<Parameter> params;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    params.push_back({"W" + std::to_string(l + 1), glorot(widths[l], widths[l + 1], rng)});
    params.push_back({"b" + std::to_string(l + 1), Tensor(1, widths[l + 1])});
  }
  return params;
}

struct ForwardResult {
  Var log_probs;
  Var logits;
};

inline std::vector<Var> bind_parameters(Tape& tape, std::span<const Parameter> params, bool track) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(track ? tape.variable(p.value) : tape.constant(p.value));
  return vars;
}

/// Granular multi-view classifier: each layer combines multi-hop views of its
/// input under the per-node actions, then applies one shared linear map.
class GranularModel {
 public:
  struct Shape {
    std::size_t in = 0;
    std::size_t hidden = 64;
    std::size_t classes = 2;
    std::size_t layers = 2;
  };

  GranularModel(Shape shape, double alpha, std::size_t k_max, double dropout, std::uint64_t seed)
      : shape_(shape), alpha_(alpha), k_max_(k_max), dropout_(dropout) {
    if (shape.layers < 1) throw std::invalid_argument("GranularModel: need at least one layer");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("GranularModel: alpha must lie in [0, 1]");
    if (k_max < 1) throw std::invalid_argument("GranularModel: k_max must be >= 1");
    SeededRng rng(seed);
    std::vector<std::size_t> widths{shape.in};
    for (std::size_t l = 1; l < shape.layers; ++l) widths.push_back(shape.hidden);
    widths.push_back(shape.classes);
    params_ = dense_stack(widths, rng);
  }

  /// Fixes the graph inputs: the layer-1 combination from the input cache and
  /// the coefficient table reused by deeper layers.
  void bind(const CsrGraph& normalized, const PropagationCache& cache, const ActionVector& actions) {
    if (cache.depth() < k_max_ + 1) throw std::invalid_argument("GranularModel: cache shallower than k_max + 1");
    if (cache.cols() != shape_.in) {
      throw ShapeError("GranularModel: cache width " + std::to_string(cache.cols()) + " != input width " +
                       std::to_string(shape_.in));
    }
    graph_ = &normalized;
    layer1_ = granular_combine(cache, actions, alpha_);
    coeffs_ = granular_coefficient_table(actions, alpha_, k_max_ + 1);
  }

  /// Rebinds with a precomputed layer-1 matrix (used by the fitness evaluator).
  void bind_combined(const CsrGraph& normalized, Tensor layer1, Tensor coeffs) {
    graph_ = &normalized;
    layer1_ = std::move(layer1);
    coeffs_ = std::move(coeffs);
  }

  ForwardResult forward(Tape& tape, std::span<const Var> w, Mode mode, SeededRng& rng) const {
    if (!graph_) throw std::logic_error("GranularModel: forward before bind()");
    Var h = tape.constant(layer1_);
    Var logits{};
    for (std::size_t l = 0; l < shape_.layers; ++l) {
      if (l > 0) h = granular_propagate(*graph_, h, coeffs_);
      h = affine(h, w[2 * l], w[2 * l + 1]);
      if (l + 1 < shape_.layers) {
        h = relu(h);
        h = dropout(h, dropout_, rng, mode == Mode::train);
      } else {
        logits = h;
      }
    }
    return {log_softmax(logits), logits};
  }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const { return grain::parameter_count(params_); }
  double alpha() const { return alpha_; }
  std::size_t k_max() const { return k_max_; }
  const Shape& shape() const { return shape_; }
  const Tensor& layer1_input() const { return layer1_; }

 private:
  Shape shape_;
  double alpha_;
  std::size_t k_max_;
  double dropout_;
  std::vector<Parameter> params_;
  const CsrGraph* graph_ = nullptr;
  Tensor layer1_;
  Tensor coeffs_;
};

/// Two-layer GCN or MLP reference classifier.
class BaselineModel {
 public:
  enum class Kind { gcn, mlp };

  BaselineModel(Kind kind, std::size_t in, std::size_t hidden, std::size_t classes, double dropout,
                std::uint64_t seed)
      : kind_(kind), dropout_(dropout) {
    SeededRng rng(seed);
    const std::size_t widths[] = {in, hidden, classes};
    params_ = dense_stack(widths, rng);
  }

  void bind(const LabeledDataset& ds) {
    if (kind_ == Kind::gcn) {
      if (!ds.normalized.has_weights()) throw std::invalid_argument("gcn baseline needs a normalized graph");
      graph_ = &ds.normalized;
      input_ = spmm(ds.normalized, ds.features);
    } else {
      graph_ = nullptr;
      input_ = ds.features;
    }
  }

  ForwardResult forward(Tape& tape, std::span<const Var> w, Mode mode, SeededRng& rng) const {
    Var h = affine(tape.constant(input_), w[0], w[1]);
    h = dropout(relu(h), dropout_, rng, mode == Mode::train);
    if (kind_ == Kind::gcn) h = propagate(*graph_, h);
    Var logits = affine(h, w[2], w[3]);
    return {log_softmax(logits), logits};
  }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
  double dropout_;
  std::vector<Parameter> params_;
  const CsrGraph* graph_ = nullptr;
  Tensor input_;
};

/// Fraction of `rows` whose argmax (lowest index on ties) equals the label.
inline double accuracy(const Tensor& scores, std::span<const int> labels, std::span<const NodeId> rows) {
  if (rows.empty()) throw std::invalid_argument("accuracy: empty split");
  std::size_t correct = 0;
  for (NodeId r : rows) {
    auto s = scores.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.size(); ++c)
      if (s[c] > s[best]) best = c;
    if (static_cast<int>(best) == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

template <typename Model>
Tensor predict(const Model& model, Mode mode = Mode::eval, std::uint64_t seed = 0) {
  Tape tape;
  SeededRng rng(seed);
  auto w = bind_parameters(tape, model.parameters(), false);
  return model.forward(tape, w, mode, rng).log_probs.value();
}

template <typename Model>
Tensor predict_logits(const Model& model) {
  Tape tape;
  SeededRng rng(0);
  auto w = bind_parameters(tape, model.parameters(), false);
  return model.forward(tape, w, Mode::eval, rng).logits.value();
}

struct FitConfig {
  std::size_t epochs = 200;
  AdamConfig adam{.lr = 0.01, .weight_decay = 5e-4};
  std::uint64_t seed = 0;
  // Evaluate val/test every epoch and restore the best-validation weights.
  bool track_best = true;
};

struct FitResult {
  std::vector<double> train_loss;
  std::vector<double> val_accuracy;
  std::vector<double> test_accuracy;
  std::size_t best_epoch = 0;
  double train_accuracy = 0.0;
  double val_at_best = 0.0;
  double test_at_best = 0.0;
  double final_val = 0.0;
  double final_test = 0.0;
};

/// Full-batch NLL training on the train split with Adam.
template <typename Model>
FitResult fit_and_score(Model& model, const LabeledDataset& ds, const FitConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("fit_and_score: epochs must be >= 1");
  if (ds.splits.train.empty() || ds.splits.val.empty() || ds.splits.test.empty())
    throw std::invalid_argument("fit_and_score: empty split");
  SeededRng rng(mix_seed(cfg.seed, 0xf17));
  auto& params = model.parameters();
  AdamState state = make_adam_state(params);
  FitResult res;
  std::vector<Parameter> best = params;
  double best_val = -1.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape tape;
    auto w = bind_parameters(tape, params, true);
    Var loss = nll_loss(model.forward(tape, w, Mode::train, rng).log_probs, ds.splits.train, ds.labels);
    tape.backward(loss);
    res.train_loss.push_back(loss.value().item());
    std::vector<Tensor> grads;
    grads.reserve(w.size());
    for (Var v : w) grads.push_back(tape.grad(v));
    adam_step(params, grads, state, cfg.adam);

    if (cfg.track_best || epoch + 1 == cfg.epochs) {
      const Tensor scores = predict(model);
      const double val = accuracy(scores, ds.labels, ds.splits.val);
      const double test = accuracy(scores, ds.labels, ds.splits.test);
      res.val_accuracy.push_back(val);
      res.test_accuracy.push_back(test);
      res.final_val = val;
      res.final_test = test;
      if (val > best_val) {
        best_val = val;
        res.best_epoch = epoch;
        res.val_at_best = val;
        res.test_at_best = test;
        if (cfg.track_best) best = params;
      }
    }
  }
  if (cfg.track_best) {
    params = best;
  } else {
    res.best_epoch = cfg.epochs - 1;
  }
  res.train_accuracy = accuracy(predict(model), ds.labels, ds.splits.train);
  return res;
}

}  // namespace grain
