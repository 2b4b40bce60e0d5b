#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grain/autodiff.hpp"
#include "grain/gradcheck.hpp"
#include "grain/graph.hpp"
#include "grain/models.hpp"
#include "grain/rng.hpp"

namespace grain {

struct OpCheck {
  std::string op;
  double max_error = 0.0;
  double tolerance = 1e-4;
  std::size_t instances = 0;

  bool passed() const { return max_error < tolerance; }
};

namespace detail {

inline Tensor random_tensor(std::size_t r, std::size_t c, SeededRng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (auto& x : t.data()) x = scale * rng.normal();
  return t;
}

// Keeps samples away from the relu kink so central differences stay smooth.
inline Tensor away_from_zero(Tensor t, double margin) {
  for (auto& x : t.data())
    if (std::abs(x) < margin) x = x < 0 ? x - margin : x + margin;
  return t;
}

// Reduces an arbitrary output to a scalar through a fixed random projection.
inline Var project(Var out, const Tensor& weights) {
  Tape& t = *out.tape;
  return sum(mul(out, t.constant(weights)));
}

inline CsrGraph random_normalized_graph(std::size_t n, SeededRng& rng) {
  std::vector<Edge> edges;
  for (NodeId u = 0; u < n; ++u)
    for (NodeId v = u + 1; v < n; ++v)
      if (rng.uniform() < 0.3) edges.emplace_back(u, v);
  return normalize_adjacency(build_graph(edges, n));
}

}  // namespace detail

/// Finite-difference check of every differentiable op on random instances.
inline std::vector<OpCheck> run_gradient_suite(std::size_t instances = 50, std::uint64_t seed = 7) {
  SeededRng rng(seed);
  std::vector<OpCheck> results;

  auto check = [&](const std::string& name, double tol, auto&& make_case) {
    OpCheck c{name, 0.0, tol, instances};
    for (std::size_t i = 0; i < instances; ++i) {
      auto [fn, x] = make_case();
      c.max_error = std::max(c.max_error, grad_check(fn, x));
    }
    results.push_back(c);
  };
  auto dims = [&] { return 1 + rng.uniform_index(4); };

  check("matmul", 1e-4, [&] {
    const std::size_t r = dims(), k = dims(), c = dims();
    Tensor b = detail::random_tensor(k, c, rng), w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape& t, Var x) { return detail::project(matmul(x, t.constant(b)), w); };
    return std::pair{f, detail::random_tensor(r, k, rng)};
  });
  check("matmul_rhs", 1e-4, [&] {
    const std::size_t r = dims(), k = dims(), c = dims();
    Tensor a = detail::random_tensor(r, k, rng), w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape& t, Var x) { return detail::project(matmul(t.constant(a), x), w); };
    return std::pair{f, detail::random_tensor(k, c, rng)};
  });
  check("add", 1e-4, [&] {
    const std::size_t r = dims(), c = dims();
    Tensor b = detail::random_tensor(r, c, rng), w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape& t, Var x) { return detail::project(add(x, t.constant(b)), w); };
    return std::pair{f, detail::random_tensor(r, c, rng)};
  });
  check("add_broadcast", 1e-4, [&] {
    const std::size_t r = dims(), c = dims();
    Tensor a = detail::random_tensor(r, c, rng), w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape& t, Var x) { return detail::project(add(t.constant(a), x), w); };
    return std::pair{f, detail::random_tensor(1, c, rng)};
  });
  check("scale", 1e-4, [&] {
    const std::size_t r = dims(), c = dims();
    const double s = rng.normal();
    Tensor w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape&, Var x) { return detail::project(scale(x, s), w); };
    return std::pair{f, detail::random_tensor(r, c, rng)};
  });
  check("sub", 1e-4, [&] {
    const std::size_t r = dims(), c = dims();
    Tensor b = detail::random_tensor(r, c, rng), w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape& t, Var x) { return detail::project(sub(t.constant(b), x), w); };
    return std::pair{f, detail::random_tensor(r, c, rng)};
  });
  check("mul", 1e-4, [&] {
    const std::size_t r = dims(), c = dims();
    Tensor w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape&, Var x) { return detail::project(mul(x, x), w); };
    return std::pair{f, detail::random_tensor(r, c, rng)};
  });
  check("relu", 1e-4, [&] {
    const std::size_t r = dims(), c = dims();
    Tensor w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape&, Var x) { return detail::project(relu(x), w); };
    return std::pair{f, detail::away_from_zero(detail::random_tensor(r, c, rng), 1e-3)};
  });
  check("tanh", 1e-4, [&] {
    const std::size_t r = dims(), c = dims();
    Tensor w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape&, Var x) { return detail::project(tanh(x), w); };
    return std::pair{f, detail::random_tensor(r, c, rng, 2.0)};
  });
  check("dropout", 1e-4, [&] {
    const std::size_t r = dims(), c = dims();
    const std::uint64_t s = rng.next_u64();
    Tensor w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape&, Var x) {
      SeededRng mask(s);  // same mask on every evaluation
      return detail::project(dropout(x, 0.5, mask, true), w);
    };
    return std::pair{f, detail::random_tensor(r, c, rng)};
  });
  check("log_softmax", 1e-4, [&] {
    const std::size_t r = dims(), c = 1 + dims();
    Tensor w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape&, Var x) { return detail::project(log_softmax(x), w); };
    return std::pair{f, detail::random_tensor(r, c, rng, 2.0)};
  });
  check("log_softmax_saturated", 1e-3, [&] {
    const std::size_t r = dims(), c = 1 + dims();
    Tensor w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape&, Var x) { return detail::project(log_softmax(x), w); };
    return std::pair{f, detail::random_tensor(r, c, rng, 40.0)};
  });
  check("nll_loss", 1e-4, [&] {
    const std::size_t r = 1 + dims(), c = 1 + dims();
    std::vector<std::size_t> rows;
    std::vector<int> labels(r);
    for (std::size_t i = 0; i < r; ++i) {
      labels[i] = static_cast<int>(rng.uniform_index(c));
      if (rng.uniform() < 0.7 || rows.empty()) rows.push_back(i);
    }
    ScalarFn f = [=](Tape&, Var x) { return nll_loss(log_softmax(x), rows, labels); };
    return std::pair{f, detail::random_tensor(r, c, rng)};
  });
  check("mse", 1e-4, [&] {
    const std::size_t r = dims(), c = dims();
    Tensor y = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape& t, Var x) { return mse(x, t.constant(y)); };
    return std::pair{f, detail::random_tensor(r, c, rng)};
  });
  check("concat", 1e-4, [&] {
    const std::size_t r = dims(), c1 = dims(), c2 = dims();
    Tensor b = detail::random_tensor(r, c2, rng), w = detail::random_tensor(r, c1 + c2, rng);
    ScalarFn f = [=](Tape& t, Var x) { return detail::project(concat(x, t.constant(b)), w); };
    return std::pair{f, detail::random_tensor(r, c1, rng)};
  });
  check("sum", 1e-4, [&] {
    ScalarFn f = [](Tape&, Var x) { return sum(mul(x, x)); };
    return std::pair{f, detail::random_tensor(dims(), dims(), rng)};
  });
  check("mean", 1e-4, [&] {
    ScalarFn f = [](Tape&, Var x) { return mean(mul(x, x)); };
    return std::pair{f, detail::random_tensor(dims(), dims(), rng)};
  });
  check("affine", 1e-4, [&] {
    const std::size_t r = dims(), k = dims(), c = dims();
    Tensor x0 = detail::random_tensor(r, k, rng), b = detail::random_tensor(1, c, rng);
    Tensor w = detail::random_tensor(r, c, rng);
    ScalarFn f = [=](Tape& t, Var W) { return detail::project(affine(t.constant(x0), W, t.constant(b)), w); };
    return std::pair{f, detail::random_tensor(k, c, rng)};
  });
  check("propagate", 1e-4, [&] {
    const std::size_t n = 2 + rng.uniform_index(8), c = dims();
    auto g = std::make_shared<CsrGraph>(detail::random_normalized_graph(n, rng));
    Tensor w = detail::random_tensor(n, c, rng);
    ScalarFn f = [=](Tape&, Var x) { return detail::project(propagate(*g, x), w); };
    return std::pair{f, detail::random_tensor(n, c, rng)};
  });
  check("granular_propagate", 1e-4, [&] {
    const std::size_t n = 2 + rng.uniform_index(8), c = dims(), kmax = 1 + rng.uniform_index(4);
    auto g = std::make_shared<CsrGraph>(detail::random_normalized_graph(n, rng));
    std::vector<double> a(n);
    for (double& v : a) v = rng.uniform(1.0, static_cast<double>(kmax));
    auto coeffs = std::make_shared<Tensor>(
        granular_coefficient_table(ActionVector(a, 1.0, static_cast<double>(kmax)), rng.uniform(), kmax + 1));
    Tensor w = detail::random_tensor(n, c, rng);
    ScalarFn f = [=](Tape&, Var x) { return detail::project(granular_propagate(*g, x, *coeffs), w); };
    return std::pair{f, detail::random_tensor(n, c, rng)};
  });
  return results;
}

}  // namespace grain
