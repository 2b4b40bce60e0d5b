#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "grain/dataset.hpp"
#include "grain/graph.hpp"
#include "grain/models.hpp"
#include "grain/propagation.hpp"
#include "grain/rng.hpp"
#include "grain/td3.hpp"

namespace grain {

struct RewardConfig {
  double scale = 10.0;     // strength of the reward signal
  std::size_t window = 4;  // number of past steps compared against

  void validate() const {
    if (!(scale > 0.0)) throw std::invalid_argument("reward: scale must be > 0");
  }
};

/// scale * sum_{l=max(0,t-w)}^{t} (F_t - F_l) / (min(w, t) + 1), t = last index.
inline double compute_reward(std::span<const double> history, const RewardConfig& cfg) {
  if (history.empty()) throw std::invalid_argument("compute_reward: empty fitness history");
  const std::size_t t = history.size() - 1;
  const std::size_t first = t > cfg.window ? t - cfg.window : 0;
  const double current = history[t];
  double acc = 0.0;
  for (std::size_t l = first; l <= t; ++l) acc += current - history[l];
  return cfg.scale * acc / static_cast<double>(std::min(cfg.window, t) + 1);
}

/// Deterministic per-node actions of a frozen policy, tagged with a version.
struct PolicySnapshot {
  std::uint64_t version = 0;
  std::vector<double> actions;
};

inline PolicySnapshot make_snapshot(const ActorNet& actor, const Tensor& features, std::uint64_t version) {
  return {version, actor.act_batch(features)};
}

struct FitnessConfig {
  double alpha = 0.2;
  std::size_t k_max = 8;
  std::size_t epochs = 20;
  double lr = 0.05;
  double weight_decay = 5e-4;
  double quantum = 0.1;  // action cache grid, hops
  std::uint64_t seed = 0;
};

/// Validation accuracy of a one-layer granular classifier in which every node
/// follows the snapshot policy except the probed node, which takes `a`.
class FitnessEvaluator {
 public:
  FitnessEvaluator(const LabeledDataset& ds, const PropagationCache& cache, FitnessConfig cfg)
      : ds_(&ds), cache_(&cache), cfg_(cfg) {
    if (cache.depth() < cfg.k_max + 1) throw std::invalid_argument("FitnessEvaluator: cache too shallow");
    if (cfg.epochs < 1) throw std::invalid_argument("FitnessEvaluator: epochs must be >= 1");
  }

  double quantize(double a) const {
    const double q = std::round(a / cfg_.quantum) * cfg_.quantum;
    return std::clamp(q, 1.0, static_cast<double>(cfg_.k_max));
  }

  double inner_fitness(NodeId v, double a, const PolicySnapshot& snapshot) {
    if (!std::isfinite(a) || a < 1.0 || a > static_cast<double>(cfg_.k_max)) {
      throw std::out_of_range("inner_fitness: action outside [1, k_max]");
    }
    if (v >= ds_->n_nodes()) throw std::out_of_range("inner_fitness: node out of range");
    if (snapshot.actions.size() != ds_->n_nodes()) throw ShapeError("inner_fitness: snapshot size mismatch");
    if (!base_ || base_version_ != snapshot.version) rebuild_base(snapshot);

    const double qa = quantize(a);
    const auto key = std::make_pair(v, static_cast<long long>(std::llround(qa / cfg_.quantum)));
    if (auto it = memo_.find(key); it != memo_.end()) {
      ++hits_;
      return it->second;
    }
    Tensor z = *base_;
    granular_combine_row(*cache_, qa, cfg_.alpha, v, z.row(v));
    const double f = train_and_score(std::move(z));
    memo_.emplace(key, f);
    ++misses_;
    return f;
  }

  /// Accuracy when every node takes the given actions (no per-node override).
  double global_fitness(const ActionVector& actions) {
    return train_and_score(granular_combine(*cache_, actions, cfg_.alpha));
  }

  std::size_t cache_hits() const { return hits_; }
  std::size_t cache_misses() const { return misses_; }
  const FitnessConfig& config() const { return cfg_; }

 private:
  void rebuild_base(const PolicySnapshot& snapshot) {
    std::vector<double> q(snapshot.actions.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = quantize(snapshot.actions[i]);
    base_ = granular_combine(*cache_, ActionVector(std::move(q), 1.0, static_cast<double>(cfg_.k_max)), cfg_.alpha);
    base_version_ = snapshot.version;
    memo_.clear();
  }

  double train_and_score(Tensor z) {
    GranularModel model({.in = z.cols(), .hidden = 0, .classes = static_cast<std::size_t>(ds_->num_classes), .layers = 1},
                        cfg_.alpha, cfg_.k_max, 0.0, mix_seed(cfg_.seed, 0x1aa));
    model.bind_combined(ds_->normalized, std::move(z), Tensor());
    FitConfig fit{.epochs = cfg_.epochs,
                  .adam = {.lr = cfg_.lr, .weight_decay = cfg_.weight_decay},
                  .seed = cfg_.seed,
                  .track_best = false};
    return fit_and_score(model, *ds_, fit).final_val;
  }

  const LabeledDataset* ds_;
  const PropagationCache* cache_;
  FitnessConfig cfg_;
  std::optional<Tensor> base_;
  std::uint64_t base_version_ = 0;
  std::map<std::pair<NodeId, long long>, double> memo_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

struct EnvState {
  NodeId node = 0;
  std::size_t t = 0;
  std::vector<double> fitness_history;
};

struct StepResult {
  std::vector<double> next_state;
  double reward = 0.0;
  double fitness = 0.0;
  NodeId node = 0;
  NodeId next_node = 0;
  bool fallback = false;  // next node drawn from the train split (empty neighborhood)
};

/// Graph walk in which each action picks the hop radius for the visited node.
class GranularityEnv {
 public:
  GranularityEnv(const LabeledDataset& ds, RewardConfig reward, std::uint64_t seed)
      : ds_(&ds), reward_(reward), rng_(seed) {
    reward_.validate();
  }

  std::vector<double> reset() {
    if (ds_->splits.train.empty()) throw std::invalid_argument("env reset: empty train split");
    state_.node = ds_->splits.train[rng_.uniform_index(ds_->splits.train.size())];
    state_.t = 0;
    state_.fitness_history.clear();
    return features_of(state_.node);
  }

  StepResult step(double a, FitnessEvaluator& evaluator, const PolicySnapshot& snapshot) {
    if (!std::isfinite(a)) throw std::invalid_argument("env step: non-finite action");
    StepResult r;
    r.node = state_.node;
    r.fitness = evaluator.inner_fitness(state_.node, a, snapshot);
    state_.fitness_history.push_back(r.fitness);
    r.reward = compute_reward(state_.fitness_history, reward_);

    const auto hood = khop_neighborhood(ds_->graph, state_.node, rounded_hops(a));
    if (hood.empty()) {
      r.next_node = ds_->splits.train[rng_.uniform_index(ds_->splits.train.size())];
      r.fallback = true;
    } else {
      r.next_node = hood[rng_.uniform_index(hood.size())];
    }
    state_.node = r.next_node;
    state_.t += 1;
    r.next_state = features_of(r.next_node);
    return r;
  }

  std::vector<double> features_of(NodeId v) const {
    auto row = ds_->features.row(v);
    return {row.begin(), row.end()};
  }

  const EnvState& state() const { return state_; }

 private:
  const LabeledDataset* ds_;
  RewardConfig reward_;
  SeededRng rng_;
  EnvState state_;
};

}  // namespace grain
