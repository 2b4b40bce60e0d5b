#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "grain/dataset.hpp"
#include "grain/env.hpp"
#include "grain/log.hpp"
#include "grain/models.hpp"
#include "grain/propagation.hpp"
#include "grain/td3.hpp"

namespace grain {

struct TrainConfig {
  // reinforcement-learning phase
  std::size_t rl_steps = 5000;
  std::size_t updates_per_step = 1;
  std::size_t episode_length = 64;
  Td3Config td3{};
  RewardConfig reward{};
  std::size_t fitness_epochs = 20;
  double fitness_lr = 0.05;
  double fitness_quantum = 0.1;
  // final classifier phase
  std::size_t gnn_epochs = 200;
  double gnn_lr = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.5;
  double alpha = 0.2;
  std::size_t k_max = 8;
  std::size_t layers = 2;
  std::size_t hidden = 64;
  bool run_gcn = true;
  bool run_mlp = true;
  std::uint64_t seed = 0;

  void validate() const {
    td3.validate();
    reward.validate();
    if (updates_per_step < 1) throw std::invalid_argument("config: rl.updates_per_step must be >= 1");
    if (episode_length < 1) throw std::invalid_argument("config: rl.episode_length must be >= 1");
    if (fitness_epochs < 1) throw std::invalid_argument("config: fitness.epochs must be >= 1");
    if (!(fitness_lr > 0.0)) throw std::invalid_argument("config: fitness.lr must be > 0");
    if (!(fitness_quantum > 0.0)) throw std::invalid_argument("config: fitness.quantum must be > 0");
    if (gnn_epochs < 1) throw std::invalid_argument("config: gnn.epochs must be >= 1");
    if (!(gnn_lr > 0.0)) throw std::invalid_argument("config: gnn.lr must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("config: gnn.weight_decay must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("config: gnn.dropout must lie in [0, 1)");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("config: gnn.alpha must lie in [0, 1]");
    if (k_max < 1) throw std::invalid_argument("config: gnn.k_max must be >= 1");
    if (layers < 1) throw std::invalid_argument("config: gnn.layers must be >= 1");
    if (hidden < 1) throw std::invalid_argument("config: gnn.hidden must be >= 1");
    if (td3.lo != 1.0 || td3.hi != static_cast<double>(k_max))
      throw std::invalid_argument("config: action bounds must be [1, gnn.k_max]");
  }

  Td3Config effective_td3() const {
    Td3Config c = td3;
    c.lo = 1.0;
    c.hi = static_cast<double>(k_max);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Flat dotted-key form of TrainConfig
// ---------------------------------------------------------------------------

namespace detail {

struct ConfigKey {
  enum class Type { count, real, flag };
  Type type;
  std::function<nlohmann::json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const nlohmann::json&)> set;
};

template <typename T>
ConfigKey count_key(T TrainConfig::*field) {
  return {ConfigKey::Type::count, [field](const TrainConfig& c) { return nlohmann::json(c.*field); },
          [field](TrainConfig& c, const nlohmann::json& v) { c.*field = v.get<T>(); }};
}
template <typename T>
ConfigKey td3_key(T Td3Config::*field, ConfigKey::Type type) {
  return {type, [field](const TrainConfig& c) { return nlohmann::json(c.td3.*field); },
          [field](TrainConfig& c, const nlohmann::json& v) { c.td3.*field = v.get<T>(); }};
}
template <typename T>
ConfigKey reward_key(T RewardConfig::*field, ConfigKey::Type type) {
  return {type, [field](const TrainConfig& c) { return nlohmann::json(c.reward.*field); },
          [field](TrainConfig& c, const nlohmann::json& v) { c.reward.*field = v.get<T>(); }};
}

inline const std::map<std::string, ConfigKey>& config_keys() {
  using T = ConfigKey::Type;
  static const std::map<std::string, ConfigKey> keys = [] {
    std::map<std::string, ConfigKey> k;
    auto real = [](double TrainConfig::*f) {
      ConfigKey key = count_key(f);
      key.type = T::real;
      return key;
    };
    auto flag = [](bool TrainConfig::*f) {
      ConfigKey key = count_key(f);
      key.type = T::flag;
      return key;
    };
    k.emplace("rl.steps", count_key(&TrainConfig::rl_steps));
    k.emplace("rl.updates_per_step", count_key(&TrainConfig::updates_per_step));
    k.emplace("rl.episode_length", count_key(&TrainConfig::episode_length));
    k.emplace("td3.gamma", td3_key(&Td3Config::gamma, T::real));
    k.emplace("td3.tau", td3_key(&Td3Config::tau, T::real));
    k.emplace("td3.policy_delay", td3_key(&Td3Config::policy_delay, T::count));
    k.emplace("td3.exploration_std", td3_key(&Td3Config::exploration_std, T::real));
    k.emplace("td3.target_noise_std", td3_key(&Td3Config::target_noise_std, T::real));
    k.emplace("td3.target_noise_clip", td3_key(&Td3Config::target_noise_clip, T::real));
    k.emplace("td3.batch_size", td3_key(&Td3Config::batch_size, T::count));
    k.emplace("td3.buffer_capacity", td3_key(&Td3Config::buffer_capacity, T::count));
    k.emplace("td3.hidden", td3_key(&Td3Config::hidden, T::count));
    k.emplace("td3.actor_lr", td3_key(&Td3Config::actor_lr, T::real));
    k.emplace("td3.critic_lr", td3_key(&Td3Config::critic_lr, T::real));
    k.emplace("reward.scale", reward_key(&RewardConfig::scale, T::real));
    k.emplace("reward.window", reward_key(&RewardConfig::window, T::count));
    k.emplace("fitness.epochs", count_key(&TrainConfig::fitness_epochs));
    k.emplace("fitness.lr", real(&TrainConfig::fitness_lr));
    k.emplace("fitness.quantum", real(&TrainConfig::fitness_quantum));
    k.emplace("gnn.epochs", count_key(&TrainConfig::gnn_epochs));
    k.emplace("gnn.lr", real(&TrainConfig::gnn_lr));
    k.emplace("gnn.weight_decay", real(&TrainConfig::weight_decay));
    k.emplace("gnn.dropout", real(&TrainConfig::dropout));
    k.emplace("gnn.alpha", real(&TrainConfig::alpha));
    k.emplace("gnn.k_max", count_key(&TrainConfig::k_max));
    k.emplace("gnn.layers", count_key(&TrainConfig::layers));
    k.emplace("gnn.hidden", count_key(&TrainConfig::hidden));
    k.emplace("baselines.gcn", flag(&TrainConfig::run_gcn));
    k.emplace("baselines.mlp", flag(&TrainConfig::run_mlp));
    k.emplace("seed", count_key(&TrainConfig::seed));
    return k;
  }();
  return keys;
}

}  // namespace detail

inline nlohmann::json config_to_flat_json(const TrainConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, key] : detail::config_keys()) j[name] = key.get(c);
  return j;
}

/// Applies a flat object of dotted keys. Unknown keys and mistyped values are rejected.
inline TrainConfig config_from_flat_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object of dotted keys");
  using T = detail::ConfigKey::Type;
  for (const auto& [name, value] : j.items()) {
    const auto& keys = detail::config_keys();
    auto it = keys.find(name);
    if (it == keys.end()) throw std::invalid_argument("config: unknown key '" + name + "'");
    const T type = it->second.type;
    const bool ok = (type == T::count && value.is_number_integer() && value.get<std::int64_t>() >= 0) ||
                    (type == T::real && value.is_number()) || (type == T::flag && value.is_boolean());
    if (!ok) throw std::invalid_argument("config: key '" + name + "' has the wrong type");
    it->second.set(base, value);
  }
  base.td3.lo = 1.0;
  base.td3.hi = static_cast<double>(base.k_max);
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

struct RlStepLog {
  double action = 0.0;
  double reward = 0.0;
  double fitness = 0.0;
};

struct RlResult {
  ActorNet policy;
  std::vector<RlStepLog> logs;
  std::size_t updates_performed = 0;
  std::size_t actor_updates = 0;
  std::size_t first_update_buffer_size = 0;  // 0 when no update ran
  double best_episode_fitness = 0.0;
  std::size_t fitness_evaluations = 0;
};

inline FitnessConfig fitness_config(const TrainConfig& cfg) {
  return {.alpha = cfg.alpha,
          .k_max = cfg.k_max,
          .epochs = cfg.fitness_epochs,
          .lr = cfg.fitness_lr,
          .weight_decay = cfg.weight_decay,
          .quantum = cfg.fitness_quantum,
          .seed = mix_seed(cfg.seed, 0xf1)};
}

/// Exploration and TD3 training; returns the snapshot policy whose episode had
/// the highest mean fitness.
inline RlResult run_rl_phase(const LabeledDataset& ds, const PropagationCache& cache, const TrainConfig& cfg) {
  cfg.validate();
  Td3Agent agent(ds.n_features(), cfg.effective_td3(), mix_seed(cfg.seed, 0x7d3));
  RlResult res;
  res.policy = agent.actor;
  if (cfg.rl_steps == 0) return res;

  ReplayBuffer buffer(cfg.td3.buffer_capacity);
  FitnessEvaluator evaluator(ds, cache, fitness_config(cfg));
  GranularityEnv env(ds, cfg.reward, mix_seed(cfg.seed, 0xe4));
  SeededRng explore(mix_seed(cfg.seed, 0xe5));

  std::uint64_t version = 0;
  ActorNet episode_actor = agent.actor;
  PolicySnapshot snapshot = make_snapshot(episode_actor, ds.features, version);
  std::vector<double> state = env.reset();
  double episode_sum = 0.0;
  std::size_t episode_steps = 0;
  double best = -1.0;

  auto close_episode = [&] {
    if (episode_steps == 0) return;
    const double m = episode_sum / static_cast<double>(episode_steps);
    if (m > best) {
      best = m;
      res.policy = episode_actor;
    }
    log().debug("episode {} mean fitness {:.4f}", version, m);
    episode_sum = 0.0;
    episode_steps = 0;
  };

  for (std::size_t t = 0; t < cfg.rl_steps; ++t) {
    const double a = select_action(agent.actor, state, cfg.td3.exploration_std, explore);
    StepResult step = env.step(a, evaluator, snapshot);
    buffer.push({state, a, step.reward, step.next_state});
    res.logs.push_back({a, step.reward, step.fitness});
    episode_sum += step.fitness;
    ++episode_steps;

    for (std::size_t k = 0; k < cfg.updates_per_step; ++k) {
      const UpdateResult u = td3_update(agent, buffer);
      if (!u.performed) continue;
      if (res.updates_performed == 0) res.first_update_buffer_size = buffer.size();
      ++res.updates_performed;
      if (u.actor_loss) ++res.actor_updates;
    }

    state = std::move(step.next_state);
    if (env.state().t >= cfg.episode_length) {
      close_episode();
      ++version;
      episode_actor = agent.actor;
      snapshot = make_snapshot(episode_actor, ds.features, version);
      state = env.reset();
    }
    if ((t + 1) % 500 == 0) log().info("rl step {}/{} best episode fitness {:.4f}", t + 1, cfg.rl_steps, best);
  }
  close_episode();
  res.best_episode_fitness = best;
  res.fitness_evaluations = evaluator.cache_misses();
  return res;
}

/// Noise-free policy action for every node.
inline ActionVector derive_actions(const ActorNet& policy, const LabeledDataset& ds) {
  auto a = policy.act_batch(ds.features);
  for (double& x : a) x = std::clamp(x, policy.lo(), policy.hi());
  return ActionVector(std::move(a), policy.lo(), policy.hi());
}

struct PhaseResult {
  FitResult fit;
  Tensor logits;  // eval-mode final-layer pre-softmax rows at the best-val checkpoint
};

inline FitConfig gnn_fit_config(const TrainConfig& cfg, std::uint64_t salt) {
  return {.epochs = cfg.gnn_epochs,
          .adam = {.lr = cfg.gnn_lr, .weight_decay = cfg.weight_decay},
          .seed = mix_seed(cfg.seed, salt),
          .track_best = true};
}

inline GranularModel make_granular_model(const LabeledDataset& ds, const TrainConfig& cfg) {
  return GranularModel({.in = ds.n_features(),
                        .hidden = cfg.hidden,
                        .classes = static_cast<std::size_t>(ds.num_classes),
                        .layers = cfg.layers},
                       cfg.alpha, cfg.k_max, cfg.dropout, mix_seed(cfg.seed, 0x9a1));
}

/// Trains the multi-layer granular classifier under fixed per-node actions.
inline PhaseResult run_gnn_phase(const LabeledDataset& ds, const PropagationCache& cache, const ActionVector& actions,
                                 const TrainConfig& cfg) {
  GranularModel model = make_granular_model(ds, cfg);
  model.bind(ds.normalized, cache, actions);
  PhaseResult r;
  r.fit = fit_and_score(model, ds, gnn_fit_config(cfg, 0x9a2));
  r.logits = predict_logits(model);
  return r;
}

struct BaselineResults {
  std::optional<PhaseResult> gcn;
  std::optional<PhaseResult> mlp;
};

inline PhaseResult run_baseline(BaselineModel::Kind kind, const LabeledDataset& ds, const TrainConfig& cfg) {
  BaselineModel model(kind, ds.n_features(), cfg.hidden, static_cast<std::size_t>(ds.num_classes), cfg.dropout,
                      mix_seed(cfg.seed, 0x9a1));
  model.bind(ds);
  PhaseResult r;
  r.fit = fit_and_score(model, ds, gnn_fit_config(cfg, 0x9a2));
  r.logits = predict_logits(model);
  return r;
}

inline BaselineResults run_baselines(const LabeledDataset& ds, const TrainConfig& cfg) {
  BaselineResults b;
  if (cfg.run_gcn) b.gcn = run_baseline(BaselineModel::Kind::gcn, ds, cfg);
  if (cfg.run_mlp) b.mlp = run_baseline(BaselineModel::Kind::mlp, ds, cfg);
  return b;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct ModelMetrics {
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::vector<double> train_loss;
  std::vector<double> val_curve;

  static ModelMetrics from(const FitResult& f) {
    return {f.train_accuracy, f.val_at_best, f.test_at_best, f.best_epoch, f.train_loss, f.val_accuracy};
  }
  friend bool operator==(const ModelMetrics&, const ModelMetrics&) = default;
};

struct ActionStats {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::vector<std::size_t> histogram;  // counts of rounded hops 1..k_max

  static ActionStats from(const ActionVector& a, std::size_t k_max) {
    ActionStats s;
    s.histogram.assign(k_max, 0);
    if (a.size() == 0) return s;
    s.min = *std::min_element(a.values.begin(), a.values.end());
    s.max = *std::max_element(a.values.begin(), a.values.end());
    double sum = 0.0;
    for (double x : a.values) {
      sum += x;
      s.histogram[std::clamp<std::size_t>(rounded_hops(x), 1, k_max) - 1] += 1;
    }
    s.mean = sum / static_cast<double>(a.size());
    return s;
  }
  friend bool operator==(const ActionStats&, const ActionStats&) = default;
};

struct MetricsReport {
  std::string dataset;
  double homophily = 0.0;
  std::uint64_t seed = 0;
  std::string splits;
  nlohmann::json config = nlohmann::json::object();
  ModelMetrics grain;
  std::optional<ModelMetrics> gcn;
  std::optional<ModelMetrics> mlp;
  ActionStats actions;
  std::vector<double> rl_action;
  std::vector<double> rl_reward;
  std::vector<double> rl_fitness;
  double wall_clock_seconds = 0.0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline nlohmann::json to_json(const MetricsReport& r) {
  auto model = [](const ModelMetrics& m) {
    return nlohmann::json{{"train_accuracy", m.train_accuracy},
                          {"val_accuracy", m.val_accuracy},
                          {"test_accuracy", m.test_accuracy},
                          {"best_epoch", m.best_epoch}};
  };
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["homophily"] = r.homophily;
  j["seed"] = r.seed;
  j["splits"] = r.splits;
  j["config"] = r.config;
  j["grain"] = model(r.grain);
  if (r.gcn) j["gcn"] = model(*r.gcn);
  if (r.mlp) j["mlp"] = model(*r.mlp);
  j["actions"] = {{"min", r.actions.min}, {"mean", r.actions.mean}, {"max", r.actions.max},
                  {"histogram", r.actions.histogram}};
  nlohmann::json curves;
  curves["grain_train_loss"] = r.grain.train_loss;
  curves["grain_val_accuracy"] = r.grain.val_curve;
  if (r.gcn) {
    curves["gcn_train_loss"] = r.gcn->train_loss;
    curves["gcn_val_accuracy"] = r.gcn->val_curve;
  }
  if (r.mlp) {
    curves["mlp_train_loss"] = r.mlp->train_loss;
    curves["mlp_val_accuracy"] = r.mlp->val_curve;
  }
  curves["rl_action"] = r.rl_action;
  curves["rl_reward"] = r.rl_reward;
  curves["rl_fitness"] = r.rl_fitness;
  j["curves"] = curves;
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  const auto& curves = j.at("curves");
  auto model = [&](const std::string& key) {
    const auto& m = j.at(key);
    ModelMetrics out;
    out.train_accuracy = m.at("train_accuracy").get<double>();
    out.val_accuracy = m.at("val_accuracy").get<double>();
    out.test_accuracy = m.at("test_accuracy").get<double>();
    out.best_epoch = m.at("best_epoch").get<std::size_t>();
    out.train_loss = curves.at(key + "_train_loss").get<std::vector<double>>();
    out.val_curve = curves.at(key + "_val_accuracy").get<std::vector<double>>();
    return out;
  };
  MetricsReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.homophily = j.at("homophily").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.splits = j.at("splits").get<std::string>();
  r.config = j.at("config");
  r.grain = model("grain");
  if (j.contains("gcn")) r.gcn = model("gcn");
  if (j.contains("mlp")) r.mlp = model("mlp");
  const auto& a = j.at("actions");
  r.actions.min = a.at("min").get<double>();
  r.actions.mean = a.at("mean").get<double>();
  r.actions.max = a.at("max").get<double>();
  r.actions.histogram = a.at("histogram").get<std::vector<std::size_t>>();
  r.rl_action = curves.at("rl_action").get<std::vector<double>>();
  r.rl_reward = curves.at("rl_reward").get<std::vector<double>>();
  r.rl_fitness = curves.at("rl_fitness").get<std::vector<double>>();
  r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  return r;
}

inline std::string write_report_string(const MetricsReport& r) { return to_json(r).dump(2) + "\n"; }

inline void emit_report(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open report for writing: " + path);
  out << write_report_string(r);
  if (!out) throw std::runtime_error("failed writing report: " + path);
}

/// Projects rows onto their top two principal components (component signs
/// fixed so the largest-magnitude loading is positive).
inline Tensor pca_2d(const Tensor& x) {
  const auto n = static_cast<Eigen::Index>(x.rows());
  const auto d = static_cast<Eigen::Index>(x.cols());
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = x(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  const Eigen::RowVectorXd mu = m.colwise().mean();
  m.rowwise() -= mu;
  const Eigen::MatrixXd cov = (m.transpose() * m) / std::max<double>(1.0, static_cast<double>(n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Tensor out(x.rows(), 2);
  for (int c = 0; c < 2; ++c) {
    if (d - 1 - c < 0) break;
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    const Eigen::VectorXd proj = m * v;
    for (Eigen::Index i = 0; i < n; ++i) out(static_cast<std::size_t>(i), static_cast<std::size_t>(c)) = proj(i);
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// TSV with header node_id, x, y, label; one row per node.
inline void write_embedding(const std::string& path, const Tensor& logits, std::span<const int> labels) {
  const Tensor xy = pca_2d(logits);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open embedding file for writing: " + path);
  out << "node_id\tx\ty\tlabel\n";
  for (std::size_t i = 0; i < xy.rows(); ++i)
    out << i << '\t' << format_double(xy(i, 0)) << '\t' << format_double(xy(i, 1)) << '\t' << labels[i] << '\n';
  if (!out) throw std::runtime_error("failed writing embedding: " + path);
}

struct PipelineResult {
  MetricsReport report;
  ActorNet policy;
  ActionVector actions;
  Tensor grain_logits;
};

/// RL phase, policy freeze, final classifier, baselines and report assembly.
inline PipelineResult run_pipeline(const LabeledDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const PropagationCache cache(ds.normalized, ds.features, cfg.k_max);

  log().info("rl phase: {} steps on '{}' (n={}, d={})", cfg.rl_steps, ds.name, ds.n_nodes(), ds.n_features());
  RlResult rl = run_rl_phase(ds, cache, cfg);
  const ActionVector actions = derive_actions(rl.policy, ds);

  log().info("gnn phase: {} epochs", cfg.gnn_epochs);
  PhaseResult grain_run = run_gnn_phase(ds, cache, actions, cfg);
  BaselineResults base = run_baselines(ds, cfg);

  PipelineResult out;
  MetricsReport& r = out.report;
  r.dataset = ds.name;
  r.homophily = edge_homophily(ds.graph, ds.labels);
  r.seed = cfg.seed;
  r.splits = ds.splits.source;
  r.config = config_to_flat_json(cfg);
  r.grain = ModelMetrics::from(grain_run.fit);
  if (base.gcn) r.gcn = ModelMetrics::from(base.gcn->fit);
  if (base.mlp) r.mlp = ModelMetrics::from(base.mlp->fit);
  r.actions = ActionStats::from(actions, cfg.k_max);
  for (const auto& l : rl.logs) {
    r.rl_action.push_back(l.action);
    r.rl_reward.push_back(l.reward);
    r.rl_fitness.push_back(l.fitness);
  }
  r.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.policy = std::move(rl.policy);
  out.actions = actions;
  out.grain_logits = std::move(grain_run.logits);
  return out;
}

}  // namespace grain
