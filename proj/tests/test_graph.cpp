#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "grain/dataset.hpp"
#include "grain/graph.hpp"
#include "grain/propagation.hpp"
#include "oracles.hpp"

using namespace grain;

namespace {

CsrGraph path3() {
  const std::vector<Edge> e{{0, 1}, {1, 2}};
  return build_graph(e, 3);
}

std::vector<NodeId> ids(std::initializer_list<NodeId> l) { return l; }

}  // namespace

TEST(BuildGraph, SingleEdgeIsSymmetrized) {
  const std::vector<Edge> e{{0, 1}};
  const CsrGraph g = build_graph(e, 2);
  EXPECT_EQ(std::vector<NodeId>(g.neighbors(0).begin(), g.neighbors(0).end()), ids({1}));
  EXPECT_EQ(std::vector<NodeId>(g.neighbors(1).begin(), g.neighbors(1).end()), ids({0}));
}

TEST(BuildGraph, DuplicatesCollapse) {
  const std::vector<Edge> single{{0, 1}};
  const std::vector<Edge> repeated{{0, 1}, {1, 0}, {0, 1}};
  EXPECT_EQ(build_graph(repeated, 2), build_graph(single, 2));
}

TEST(BuildGraph, EmptyEdgeList) {
  const CsrGraph g = build_graph(std::vector<Edge>{}, 3);
  EXPECT_EQ(g.n_nodes, 3u);
  for (NodeId v = 0; v < 3; ++v) EXPECT_EQ(g.degree(v), 0u);
}

TEST(BuildGraph, SelfEdgesDropped) {
  const std::vector<Edge> e{{0, 0}, {0, 1}};
  const CsrGraph g = build_graph(e, 2);
  EXPECT_EQ(g.nnz(), 2u);
}

TEST(BuildGraph, OutOfRangeNamesEdge) {
  const std::vector<Edge> e{{0, 1}, {2, 7}};
  try {
    build_graph(e, 3);
    FAIL() << "expected out_of_range";
  } catch (const std::out_of_range& err) {
    EXPECT_NE(std::string(err.what()).find("(2, 7)"), std::string::npos) << err.what();
  }
}

TEST(Normalize, TwoNodeGraphIsAllHalves) {
  const std::vector<Edge> e{{0, 1}};
  const CsrGraph g = normalize_adjacency(build_graph(e, 2));
  ASSERT_EQ(g.nnz(), 4u);
  for (double w : g.weights) EXPECT_DOUBLE_EQ(w, 0.5);
}

TEST(Normalize, IsolatedNodeGetsUnitSelfLoop) {
  const CsrGraph g = normalize_adjacency(build_graph(std::vector<Edge>{}, 1));
  ASSERT_EQ(g.nnz(), 1u);
  EXPECT_EQ(g.col_indices[0], 0u);
  EXPECT_DOUBLE_EQ(g.weights[0], 1.0);
}

TEST(Normalize, PathHandValues) {
  const auto d = oracle::to_dense(normalize_adjacency(path3()));
  EXPECT_NEAR(d[0][0], 0.5, 1e-15);
  EXPECT_NEAR(d[0][1], 1.0 / std::sqrt(6.0), 1e-15);
  EXPECT_NEAR(d[0][1], 0.40825, 1e-5);
  EXPECT_NEAR(d[1][1], 1.0 / 3.0, 1e-15);
}

TEST(Normalize, MatchesDenseOracleAndInvariants) {
  SeededRng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(20);
    const auto edges = oracle::random_edges(n, rng.uniform(), rng);
    const CsrGraph g = normalize_adjacency(build_graph(edges, n));
    const auto expect = oracle::normalized(oracle::adjacency(n, edges));
    const auto got = oracle::to_dense(g);
    for (std::size_t i = 0; i < n; ++i) {
      // D^1/2 Â D^-1/2 is row-stochastic, with D the degree of A + I.
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_NEAR(got[i][j], expect[i][j], 1e-12);
        EXPECT_EQ(got[i][j], got[j][i]);
        row += got[i][j] * std::sqrt(static_cast<double>(g.degree(j)) / static_cast<double>(g.degree(i)));
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
      EXPECT_GT(got[i][i], 0.0);
      auto nb = g.neighbors(i);
      EXPECT_TRUE(std::is_sorted(nb.begin(), nb.end()));
      EXPECT_EQ(std::adjacent_find(nb.begin(), nb.end()), nb.end());
    }
  }
}

TEST(PropagationCache, TwoNodeHandValues) {
  const std::vector<Edge> e{{0, 1}};
  const CsrGraph g = normalize_adjacency(build_graph(e, 2));
  const Tensor x = Tensor::from_rows({{1, 0}, {0, 1}});
  const PropagationCache c(g, x, 1);
  EXPECT_EQ(c.power(0), x);
  EXPECT_LT(max_abs_diff(c.power(1), Tensor(2, 2, 0.5)), 1e-15);
  EXPECT_LT(max_abs_diff(c.power(2), c.power(1)), 1e-15);
  EXPECT_EQ(c.depth(), 2u);
}

TEST(PropagationCache, RejectsBadInputs) {
  const std::vector<Edge> e{{0, 1}};
  const CsrGraph raw = build_graph(e, 2);
  EXPECT_THROW(PropagationCache(raw, Tensor(2, 1), 2), std::invalid_argument);
  EXPECT_THROW(PropagationCache(normalize_adjacency(raw), Tensor(2, 1), 0), std::invalid_argument);
}

TEST(PropagationCache, MatchesDensePowers) {
  SeededRng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(20), d = 1 + rng.uniform_index(4), k_max = 1 + rng.uniform_index(5);
    const auto edges = oracle::random_edges(n, rng.uniform(), rng);
    Tensor x(n, d);
    for (auto& v : x.data()) v = rng.normal();
    const PropagationCache c(normalize_adjacency(build_graph(edges, n)), x, k_max);
    const auto a_hat = oracle::normalized(oracle::adjacency(n, edges));
    const auto xd = oracle::to_dense(x);
    for (std::size_t k = 0; k <= k_max + 1; ++k) {
      const auto expect = oracle::power_times(a_hat, xd, k);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(c.power(k)(i, j), expect[i][j], 1e-10);
    }
  }
}

TEST(Khop, PathExamples) {
  const CsrGraph g = path3();
  EXPECT_EQ(khop_neighborhood(g, 0, 1), ids({1}));
  EXPECT_EQ(khop_neighborhood(g, 0, 2), ids({1, 2}));
  EXPECT_EQ(khop_neighborhood(build_graph(std::vector<Edge>{}, 2), 1, 3), ids({}));
}

TEST(Khop, NestedAndCoversConnectedGraph) {
  SeededRng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(25);
    std::vector<Edge> edges;
    for (NodeId v = 1; v < n; ++v) edges.emplace_back(v, rng.uniform_index(v));  // random tree: connected
    for (int extra = 0; extra < 5; ++extra) edges.emplace_back(rng.uniform_index(n), rng.uniform_index(n));
    const CsrGraph g = build_graph(edges, n);
    for (NodeId v = 0; v < n; ++v) {
      std::vector<NodeId> prev;
      for (std::size_t k = 1; k <= n; ++k) {
        const auto cur = khop_neighborhood(g, v, k);
        EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
        EXPECT_FALSE(std::binary_search(cur.begin(), cur.end(), v));
        prev = cur;
      }
      EXPECT_EQ(prev.size(), n - 1);  // n-1 >= diameter
    }
  }
}

TEST(Homophily, TriangleAndUniformLabels) {
  const std::vector<Edge> tri{{0, 1}, {1, 2}, {0, 2}};
  const CsrGraph g = build_graph(tri, 3);
  const std::vector<int> mixed{0, 0, 1}, same{2, 2, 2};
  EXPECT_NEAR(edge_homophily(g, mixed), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(edge_homophily(g, same), 1.0);
}

TEST(Homophily, ZeroEdgesRejected) {
  const std::vector<int> labels{0, 1};
  EXPECT_THROW(edge_homophily(build_graph(std::vector<Edge>{}, 2), labels), std::invalid_argument);
}

TEST(Homophily, InvariantUnderRelabeling) {
  SeededRng rng(41);
  const std::size_t n = 15;
  const auto edges = oracle::random_edges(n, 0.4, rng);
  std::vector<int> labels(n);
  for (int& y : labels) y = static_cast<int>(rng.uniform_index(3));
  std::vector<NodeId> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<Edge> pe;
  for (auto [u, v] : edges) pe.emplace_back(perm[u], perm[v]);
  std::vector<int> pl(n);
  for (std::size_t i = 0; i < n; ++i) pl[perm[i]] = labels[i];
  EXPECT_DOUBLE_EQ(edge_homophily(build_graph(edges, n), labels), edge_homophily(build_graph(pe, n), pl));
}

TEST(Synthetic, FullHomophilyIsExact) {
  const auto ds = generate_synthetic({.h_target = 1.0, .seed = 3});
  EXPECT_EQ(edge_homophily(ds.graph, ds.labels), 1.0);
}

TEST(Synthetic, HitsTargetHomophily) {
  for (double h : {0.1, 0.2, 0.5, 0.8}) {
    const auto ds = generate_synthetic({.n = 500, .h_target = h, .avg_degree = 10, .seed = 5});
    EXPECT_LE(std::abs(edge_homophily(ds.graph, ds.labels) - h), 0.05) << h;
    EXPECT_EQ(ds.graph.undirected_edge_count(), 2500u);
  }
}

TEST(Synthetic, Deterministic) {
  const SynthConfig cfg{.h_target = 0.3, .seed = 77};
  const auto a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  EXPECT_EQ(a.graph, b.graph);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.splits, b.splits);
}

TEST(Synthetic, SplitsAreStratifiedAndDisjoint) {
  const auto ds = generate_synthetic({.n = 500, .seed = 1});
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.splits.train.size(), 300u);
  EXPECT_EQ(ds.splits.val.size(), 100u);
  EXPECT_EQ(ds.splits.test.size(), 100u);
  std::vector<int> per_class(5, 0);
  for (NodeId v : ds.splits.train) ++per_class[ds.labels[v]];
  for (int c : per_class) EXPECT_EQ(c, 60);
}

TEST(Synthetic, RejectsInfeasibleConfigs) {
  EXPECT_THROW(generate_synthetic({.num_classes = 1, .h_target = 0.5}), std::invalid_argument);
  EXPECT_THROW(generate_synthetic({.n = 3, .num_classes = 5}), std::invalid_argument);
  EXPECT_THROW(generate_synthetic({.h_target = 1.5}), std::invalid_argument);
  EXPECT_THROW(generate_synthetic({.dim = 2}), std::invalid_argument);
}

TEST(Dataset, ValidateCatchesOverlap) {
  auto ds = generate_synthetic({.n = 50, .seed = 2});
  ds.splits.val.push_back(ds.splits.train.front());
  EXPECT_THROW(ds.validate(), std::invalid_argument);
}
