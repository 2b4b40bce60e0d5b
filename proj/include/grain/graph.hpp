#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grain/autodiff.hpp"
#include "grain/tensor.hpp"

namespace grain {

using NodeId = std::size_t;
using Edge = std::pair<NodeId, NodeId>;

/// Symmetric compressed-sparse-row graph. `weights` is empty for the raw
/// adjacency and aligned with `col_indices` once normalized.
struct CsrGraph {
  std::size_t n_nodes = 0;
  std::vector<std::size_t> row_offsets{0};
  std::vector<NodeId> col_indices;
  std::vector<double> weights;

  bool has_weights() const { return !weights.empty(); }

  std::span<const NodeId> neighbors(NodeId v) const {
    return {col_indices.data() + row_offsets[v], row_offsets[v + 1] - row_offsets[v]};
  }
  std::span<const double> row_weights(NodeId v) const {
    return {weights.data() + row_offsets[v], row_offsets[v + 1] - row_offsets[v]};
  }
  std::size_t degree(NodeId v) const { return row_offsets[v + 1] - row_offsets[v]; }
  std::size_t nnz() const { return col_indices.size(); }

  /// Number of undirected edges, self-loops excluded.
  std::size_t undirected_edge_count() const {
    std::size_t e = 0;
    for (NodeId i = 0; i < n_nodes; ++i)
      for (NodeId j : neighbors(i))
        if (j > i) ++e;
    return e;
  }

  /// Undirected edges (i < j), self-loops excluded, in row-major order.
  std::vector<Edge> edge_list() const {
    std::vector<Edge> out;
    for (NodeId i = 0; i < n_nodes; ++i)
      for (NodeId j : neighbors(i))
        if (j > i) out.emplace_back(i, j);
    return out;
  }

  friend bool operator==(const CsrGraph&, const CsrGraph&) = default;
};

/// Symmetrized, deduplicated CSR from an undirected edge list. Self-edges are dropped.
inline CsrGraph build_graph(std::span<const Edge> edges, std::size_t n_nodes) {
  std::vector<Edge> directed;
  directed.reserve(edges.size() * 2);
  for (const auto& [u, v] : edges) {
    if (u >= n_nodes || v >= n_nodes) {
      throw std::out_of_range("build_graph: edge (" + std::to_string(u) + ", " +
                              std::to_string(v) + ") out of range for " +
                              std::to_string(n_nodes) + " nodes");
    }
    if (u == v) continue;
    directed.emplace_back(u, v);
    directed.emplace_back(v, u);
  }
  std::sort(directed.begin(), directed.end());
  directed.erase(std::unique(directed.begin(), directed.end()), directed.end());

  CsrGraph g;
  g.n_nodes = n_nodes;
  g.row_offsets.assign(n_nodes + 1, 0);
  g.col_indices.reserve(directed.size());
  for (const auto& [u, v] : directed) {
    ++g.row_offsets[u + 1];
    g.col_indices.push_back(v);
  }
  for (std::size_t i = 0; i < n_nodes; ++i) g.row_offsets[i + 1] += g.row_offsets[i];
  return g;
}

/// Weights of D^-1/2 (A + I) D^-1/2, D the degree matrix of A + I.
inline CsrGraph normalize_adjacency(const CsrGraph& raw) {
  const std::size_t n = raw.n_nodes;
  std::vector<double> inv_sqrt(n);
  for (NodeId i = 0; i < n; ++i) {
    std::size_t deg = 1;  // self-loop
    for (NodeId j : raw.neighbors(i))
      if (j != i) ++deg;
    inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(deg));
  }
  CsrGraph g;
  g.n_nodes = n;
  g.row_offsets.assign(n + 1, 0);
  for (NodeId i = 0; i < n; ++i) {
    bool self_done = false;
    auto push = [&](NodeId j) {
      g.col_indices.push_back(j);
      g.weights.push_back(inv_sqrt[i] * inv_sqrt[j]);
    };
    for (NodeId j : raw.neighbors(i)) {
      if (j == i) continue;
      if (!self_done && j > i) {
        push(i);
        self_done = true;
      }
      push(j);
    }
    if (!self_done) push(i);
    g.row_offsets[i + 1] = g.col_indices.size();
  }
  return g;
}

/// out = A * x for a weighted CSR matrix A.
inline Tensor spmm(const CsrGraph& g, const Tensor& x) {
  if (!g.has_weights()) throw std::invalid_argument("spmm: graph has no weights (normalize first)");
  if (x.rows() != g.n_nodes) {
    throw ShapeError("spmm: graph has " + std::to_string(g.n_nodes) + " nodes but features are " +
                     x.shape_string());
  }
  Tensor out(x.rows(), x.cols());
  const std::size_t d = x.cols();
  for (NodeId i = 0; i < g.n_nodes; ++i) {
    double* o = out.row(i).data();
    for (std::size_t e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) {
      const double w = g.weights[e];
      const double* xr = x.row(g.col_indices[e]).data();
      for (std::size_t j = 0; j < d; ++j) o[j] += w * xr[j];
    }
  }
  return out;
}

/// Differentiable propagation by a fixed symmetric matrix (its transpose is itself).
inline Var propagate(const CsrGraph& g, Var x) {
  return x.tape->record(spmm(g, x.value()), {x}, [&g, x](Tape& tp, const Tensor& grad) {
    tp.accumulate(x, spmm(g, grad));
  });
}

/// Nodes at shortest-path distance 1..k from v, ascending, found by truncated BFS.
inline std::vector<NodeId> khop_neighborhood(const CsrGraph& g, NodeId v, std::size_t k) {
  if (v >= g.n_nodes) throw std::out_of_range("khop_neighborhood: node out of range");
  if (k < 1) throw std::invalid_argument("khop_neighborhood: k must be >= 1");
  std::vector<std::size_t> dist(g.n_nodes, SIZE_MAX);
  std::vector<NodeId> frontier{v}, next, found;
  dist[v] = 0;
  for (std::size_t depth = 1; depth <= k && !frontier.empty(); ++depth) {
    next.clear();
    for (NodeId u : frontier) {
      for (NodeId w : g.neighbors(u)) {
        if (dist[w] != SIZE_MAX) continue;
        dist[w] = depth;
        next.push_back(w);
        found.push_back(w);
      }
    }
    std::swap(frontier, next);
  }
  std::sort(found.begin(), found.end());
  return found;
}

/// Fraction of undirected edges (self-loops excluded) joining equal labels.
inline double edge_homophily(const CsrGraph& g, std::span<const int> labels) {
  if (labels.size() != g.n_nodes) {
    throw std::invalid_argument("edge_homophily: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(g.n_nodes) + " nodes");
  }
  std::size_t total = 0, same = 0;
  for (NodeId i = 0; i < g.n_nodes; ++i) {
    for (NodeId j : g.neighbors(i)) {
      if (j <= i) continue;
      ++total;
      if (labels[i] == labels[j]) ++same;
    }
  }
  if (total == 0) throw std::invalid_argument("edge_homophily: graph has no edges");
  return static_cast<double>(same) / static_cast<double>(total);
}

}  // namespace grain
