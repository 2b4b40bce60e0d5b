#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "grain/graph.hpp"
#include "grain/rng.hpp"
#include "grain/tensor.hpp"

namespace grain {

struct Splits {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;
  // "file" when read from splits.tsv, otherwise a description of the generator.
  std::string source = "generated";

  friend bool operator==(const Splits&, const Splits&) = default;
};

/// Graph, features, labels and splits for node classification.
struct LabeledDataset {
  std::string name;
  CsrGraph graph;       // raw symmetric adjacency, no self-loops
  CsrGraph normalized;  // D^-1/2 (A + I) D^-1/2
  Tensor features;      // n x d
  std::vector<int> labels;
  int num_classes = 0;
  Splits splits;

  std::size_t n_nodes() const { return graph.n_nodes; }
  std::size_t n_features() const { return features.cols(); }

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const {
    const std::size_t n = graph.n_nodes;
    if (features.rows() != n) {
      throw std::invalid_argument("dataset: feature rows " + std::to_string(features.rows()) +
                                  " != node count " + std::to_string(n));
    }
    if (labels.size() != n) throw std::invalid_argument("dataset: label count != node count");
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes) {
        throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " of node " +
                                    std::to_string(i) + " outside [0, " +
                                    std::to_string(num_classes) + ")");
      }
    }
    std::vector<int> seen(n, 0);
    const std::vector<NodeId>* parts[] = {&splits.train, &splits.val, &splits.test};
    for (int s = 0; s < 3; ++s) {
      for (NodeId v : *parts[s]) {
        if (v >= n) throw std::invalid_argument("dataset: split node out of range");
        if (seen[v]++) {
          throw std::invalid_argument("dataset: node " + std::to_string(v) +
                                      " appears in more than one split");
        }
      }
    }
  }
};

/// Per-class shuffled 60/20/20 split.
inline Splits stratified_split(std::span<const int> labels, int num_classes, std::uint64_t seed,
                               double train_frac = 0.6, double val_frac = 0.2) {
  SeededRng rng(mix_seed(seed, 0x5b1175));
  std::vector<std::vector<NodeId>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  Splits s;
  for (auto& members : by_class) {
    rng.shuffle(members);
    const auto m = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * m));
    const auto n_val = std::min(members.size() - std::min(members.size(), n_train),
                                static_cast<std::size_t>(std::llround(val_frac * m)));
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i < n_train)
        s.train.push_back(members[i]);
      else if (i < n_train + n_val)
        s.val.push_back(members[i]);
      else
        s.test.push_back(members[i]);
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  s.source = "stratified-60-20-20 seed=" + std::to_string(seed);
  return s;
}

struct SynthConfig {
  std::size_t n = 500;
  int num_classes = 5;
  double h_target = 0.5;
  double avg_degree = 10.0;
  std::size_t dim = 16;
  double class_separation = 1.5;
  std::uint64_t seed = 0;
};

/// Random graph with controllable edge homophily and class-mean features.
inline LabeledDataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.num_classes < 1) throw std::invalid_argument("synthetic: need at least one class");
  const auto C = static_cast<std::size_t>(cfg.num_classes);
  if (cfg.n < C) throw std::invalid_argument("synthetic: n must be >= number of classes");
  if (!(cfg.h_target >= 0.0 && cfg.h_target <= 1.0))
    throw std::invalid_argument("synthetic: h_target must lie in [0, 1]");
  if (!(cfg.avg_degree > 0.0)) throw std::invalid_argument("synthetic: avg_degree must be > 0");
  if (cfg.dim < C) throw std::invalid_argument("synthetic: dim must be >= classes for orthogonal means");
  if (!(cfg.class_separation >= 0.0)) throw std::invalid_argument("synthetic: class_separation must be >= 0");
  if (C == 1 && cfg.h_target < 1.0)
    throw std::invalid_argument("synthetic: a single class cannot produce inter-class edges (h_target < 1)");

  SeededRng rng(cfg.seed);
  LabeledDataset ds;
  ds.name = "synthetic";
  ds.num_classes = cfg.num_classes;

  ds.labels.resize(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) ds.labels[i] = static_cast<int>(i % C);
  rng.shuffle(ds.labels);

  std::vector<std::vector<NodeId>> members(C);
  for (std::size_t i = 0; i < cfg.n; ++i) members[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  if (cfg.h_target > 0.0 && cfg.n < 2 * C)
    throw std::invalid_argument("synthetic: classes too small for intra-class edges");

  const auto m = static_cast<std::size_t>(std::floor(static_cast<double>(cfg.n) * cfg.avg_degree / 2.0));
  std::set<Edge> chosen;
  std::vector<Edge> edges;
  edges.reserve(m);
  const std::size_t max_attempts = 50 * m + 1000;
  for (std::size_t attempt = 0; edges.size() < m && attempt < max_attempts; ++attempt) {
    const NodeId u = rng.uniform_index(cfg.n);
    const auto cu = static_cast<std::size_t>(ds.labels[u]);
    NodeId v;
    if (rng.uniform() < cfg.h_target) {
      const auto& same = members[cu];
      if (same.size() < 2) continue;
      v = same[rng.uniform_index(same.size())];
      if (v == u) continue;
    } else {
      const std::size_t others = cfg.n - members[cu].size();
      std::size_t pick = rng.uniform_index(others);
      v = 0;
      for (std::size_t c = 0; c < C; ++c) {
        if (c == cu) continue;
        if (pick < members[c].size()) {
          v = members[c][pick];
          break;
        }
        pick -= members[c].size();
      }
    }
    const Edge e{std::min(u, v), std::max(u, v)};
    if (chosen.insert(e).second) edges.push_back(e);
  }
  if (edges.size() < m) throw std::invalid_argument("synthetic: requested degree is infeasible");

  ds.graph = build_graph(edges, cfg.n);
  ds.normalized = normalize_adjacency(ds.graph);

  ds.features = Tensor(cfg.n, cfg.dim);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    auto row = ds.features.row(i);
    for (double& x : row) x = rng.normal();
    row[static_cast<std::size_t>(ds.labels[i])] += cfg.class_separation;
  }
  ds.splits = stratified_split(ds.labels, cfg.num_classes, cfg.seed);
  ds.validate();
  return ds;
}

}  // namespace grain
