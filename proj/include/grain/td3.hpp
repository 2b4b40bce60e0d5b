#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grain/autodiff.hpp"
#include "grain/models.hpp"
#include "grain/optim.hpp"
#include "grain/rng.hpp"

namespace grain {

struct Td3Config {
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t policy_delay = 2;
  double exploration_std = 0.5;  // hops
  double target_noise_std = 0.5;  // hops
  double target_noise_clip = 1.0;  // hops
  std::size_t batch_size = 128;
  std::size_t buffer_capacity = 100000;
  std::size_t hidden = 64;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double lo = 1.0;
  double hi = 8.0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("td3: gamma must lie in [0, 1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("td3: tau must lie in (0, 1]");
    if (policy_delay < 1) throw std::invalid_argument("td3: policy_delay must be >= 1");
    if (!(target_noise_clip > 0.0)) throw std::invalid_argument("td3: noise clip must be > 0");
    if (exploration_std < 0.0 || target_noise_std < 0.0) throw std::invalid_argument("td3: noise std must be >= 0");
    if (batch_size < 1 || batch_size > buffer_capacity)
      throw std::invalid_argument("td3: batch size must lie in [1, buffer capacity]");
    if (!(lo < hi)) throw std::invalid_argument("td3: action bounds must satisfy lo < hi");
    if (hidden < 1) throw std::invalid_argument("td3: hidden width must be >= 1");
    if (!(actor_lr > 0.0 && critic_lr > 0.0)) throw std::invalid_argument("td3: learning rates must be > 0");
  }
};

/// Fully connected relu network: in -> hidden -> hidden -> 1.
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(std::size_t in, std::size_t hidden, std::uint64_t seed) {
    SeededRng rng(seed);
    const std::size_t widths[] = {in, hidden, hidden, 1};
    params_ = dense_stack(widths, rng);
  }

  Var forward(std::span<const Var> w, Var x) const {
    Var h = relu(affine(x, w[0], w[1]));
    h = relu(affine(h, w[2], w[3]));
    return affine(h, w[4], w[5]);
  }

  std::size_t input_width() const { return params_.empty() ? 0 : params_[0].value.rows(); }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  void zero() {
    for (auto& p : params_) p.value.fill(0.0);
  }

  friend bool operator==(const DenseNet&, const DenseNet&) = default;

 private:
  std::vector<Parameter> params_;
};

/// Deterministic policy: a = lo + (hi - lo)(tanh(u) + 1) / 2.
class ActorNet {
 public:
  ActorNet() = default;
  ActorNet(std::size_t state_dim, std::size_t hidden, double lo, double hi, std::uint64_t seed)
      : net_(state_dim, hidden, seed), lo_(lo), hi_(hi) {}

  double lo() const { return lo_; }
  double hi() const { return hi_; }

  /// Batched actions (rows x 1) as a differentiable value.
  Var forward(std::span<const Var> w, Var states) const {
    Tape& t = *states.tape;
    Var u = net_.forward(w, states);
    Var squashed = scale(tanh(u), 0.5 * (hi_ - lo_));
    return add(squashed, t.constant(Tensor::scalar(0.5 * (hi_ + lo_))));
  }

  double map_preactivation(double u) const {
    return std::clamp(lo_ + (hi_ - lo_) * (std::tanh(u) + 1.0) / 2.0, lo_, hi_);
  }

  /// Deterministic actions for every row of `states`.
  std::vector<double> act_batch(const Tensor& states) const {
    check_width(states.cols());
    Tape tape;
    auto w = bind_parameters(tape, net_.parameters(), false);
    const Tensor& u = net_.forward(w, tape.constant(states)).value();
    std::vector<double> out(states.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = map_preactivation(u(i, 0));
    return out;
  }

  double act(std::span<const double> state) const {
    return act_batch(Tensor(1, state.size(), std::vector<double>(state.begin(), state.end())))[0];
  }

  void check_width(std::size_t d) const {
    if (d != net_.input_width()) {
      throw ShapeError("actor expects state width " + std::to_string(net_.input_width()) + ", got " +
                       std::to_string(d));
    }
  }

  DenseNet& net() { return net_; }
  const DenseNet& net() const { return net_; }
  std::vector<Parameter>& parameters() { return net_.parameters(); }
  const std::vector<Parameter>& parameters() const { return net_.parameters(); }
  void zero() { net_.zero(); }

  friend bool operator==(const ActorNet&, const ActorNet&) = default;

 private:
  DenseNet net_;
  double lo_ = 1.0;
  double hi_ = 8.0;
};

/// Q(s, a) on concat(state, action rescaled to [-1, 1]).
class CriticNet {
 public:
  CriticNet() = default;
  CriticNet(std::size_t state_dim, std::size_t hidden, double lo, double hi, std::uint64_t seed)
      : net_(state_dim + 1, hidden, seed), lo_(lo), hi_(hi) {}

  Var forward(std::span<const Var> w, Var states, Var actions) const {
    Tape& t = *states.tape;
    const double half = 0.5 * (hi_ - lo_);
    Var centered = add(actions, t.constant(Tensor::scalar(-0.5 * (hi_ + lo_))));
    return net_.forward(w, concat(states, scale(centered, 1.0 / half)));
  }

  std::vector<Parameter>& parameters() { return net_.parameters(); }
  const std::vector<Parameter>& parameters() const { return net_.parameters(); }

  friend bool operator==(const CriticNet&, const CriticNet&) = default;

 private:
  DenseNet net_;
  double lo_ = 1.0;
  double hi_ = 8.0;
};

struct Transition {
  std::vector<double> state;
  double action = 0.0;
  double reward = 0.0;
  std::vector<double> next_state;
};

struct Batch {
  Tensor states;       // B x d
  Tensor actions;      // B x 1
  Tensor rewards;      // B x 1
  Tensor next_states;  // B x d
};

/// Fixed-capacity ring of transitions; the oldest entry is overwritten once full.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  }

  void push(Transition t) {
    if (!std::isfinite(t.action) || !std::isfinite(t.reward)) {
      throw std::invalid_argument("ReplayBuffer: non-finite action or reward");
    }
    if (!storage_.empty() && (t.state.size() != storage_[0].state.size() ||
                              t.next_state.size() != storage_[0].state.size())) {
      throw ShapeError("ReplayBuffer: transition state width differs from stored entries");
    }
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  /// Uniform draw with replacement over live entries.
  std::vector<std::size_t> sample_indices(std::size_t batch, SeededRng& rng) const {
    if (storage_.empty()) throw std::logic_error("ReplayBuffer: sample from empty buffer");
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.uniform_index(storage_.size());
    return idx;
  }

  Batch gather(std::span<const std::size_t> idx) const {
    const std::size_t d = storage_.at(0).state.size();
    Batch b{Tensor(idx.size(), d), Tensor(idx.size(), 1), Tensor(idx.size(), 1), Tensor(idx.size(), d)};
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const Transition& t = storage_.at(idx[r]);
      std::copy(t.state.begin(), t.state.end(), b.states.row(r).begin());
      std::copy(t.next_state.begin(), t.next_state.end(), b.next_states.row(r).begin());
      b.actions(r, 0) = t.action;
      b.rewards(r, 0) = t.reward;
    }
    return b;
  }

  Batch sample(std::size_t batch, SeededRng& rng) const { return gather(sample_indices(batch, rng)); }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return storage_.at(i); }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> storage_;
};

/// Actor, twin critics, their target copies and optimizer state.
struct Td3Agent {
  Td3Config config;
  ActorNet actor;
  CriticNet critic1;
  CriticNet critic2;
  ActorNet actor_target;
  CriticNet critic1_target;
  CriticNet critic2_target;
  AdamState actor_opt;
  AdamState critic1_opt;
  AdamState critic2_opt;
  SeededRng rng;
  std::uint64_t updates = 0;
  std::uint64_t actor_updates = 0;

  Td3Agent(std::size_t state_dim, Td3Config cfg, std::uint64_t seed)
      : config(cfg),
        actor(state_dim, cfg.hidden, cfg.lo, cfg.hi, mix_seed(seed, 1)),
        critic1(state_dim, cfg.hidden, cfg.lo, cfg.hi, mix_seed(seed, 2)),
        critic2(state_dim, cfg.hidden, cfg.lo, cfg.hi, mix_seed(seed, 3)),
        rng(mix_seed(seed, 4)) {
    config.validate();
    actor_target = actor;
    critic1_target = critic1;
    critic2_target = critic2;
    actor_opt = make_adam_state(actor.parameters());
    critic1_opt = make_adam_state(critic1.parameters());
    critic2_opt = make_adam_state(critic2.parameters());
  }

  std::size_t state_dim() const { return actor.net().input_width(); }
};

/// clamp(actor(state) + N(0, noise_std^2), lo, hi).
inline double select_action(const ActorNet& actor, std::span<const double> state, double noise_std, SeededRng& rng) {
  for (double x : state)
    if (!std::isfinite(x)) throw std::invalid_argument("select_action: non-finite state");
  double a = actor.act(state);
  if (noise_std > 0.0) a += rng.normal(0.0, noise_std);
  return std::clamp(a, actor.lo(), actor.hi());
}

inline double clipped_noise(SeededRng& rng, double std, double clip) {
  if (std == 0.0) return 0.0;
  return std::clamp(rng.normal(0.0, std), -clip, clip);
}

/// Smoothed target actions clamp(pi'(s') + clip(eps), lo, hi), one per batch row.
inline Tensor target_actions(const Td3Agent& agent, const Tensor& next_states, SeededRng& rng) {
  const auto det = agent.actor_target.act_batch(next_states);
  Tensor a(next_states.rows(), 1);
  for (std::size_t i = 0; i < det.size(); ++i) {
    a(i, 0) = std::clamp(det[i] + clipped_noise(rng, agent.config.target_noise_std, agent.config.target_noise_clip),
                         agent.config.lo, agent.config.hi);
  }
  return a;
}

inline Tensor critic_values(const CriticNet& critic, const Tensor& states, const Tensor& actions) {
  Tape tape;
  auto w = bind_parameters(tape, critic.parameters(), false);
  return critic.forward(w, tape.constant(states), tape.constant(actions)).value();
}

/// y = r + gamma * min(Q1'(s', a_hat), Q2'(s', a_hat)).
inline Tensor compute_target(const Batch& batch, const Td3Agent& agent, SeededRng& rng) {
  const Tensor a_hat = target_actions(agent, batch.next_states, rng);
  const Tensor q1 = critic_values(agent.critic1_target, batch.next_states, a_hat);
  const Tensor q2 = critic_values(agent.critic2_target, batch.next_states, a_hat);
  Tensor y(batch.rewards.rows(), 1);
  for (std::size_t i = 0; i < y.rows(); ++i)
    y(i, 0) = batch.rewards(i, 0) + agent.config.gamma * std::min(q1(i, 0), q2(i, 0));
  return y;
}

/// target <- tau * online + (1 - tau) * target, parameter by parameter.
inline void soft_update(std::vector<Parameter>& target, const std::vector<Parameter>& online, double tau) {
  if (target.size() != online.size()) throw ShapeError("soft_update: parameter lists differ");
  for (std::size_t i = 0; i < target.size(); ++i) {
    Tensor::require_same_shape(target[i].value, online[i].value, "soft_update");
    auto t = target[i].value.data();
    auto o = online[i].value.data();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = tau * o[j] + (1.0 - tau) * t[j];
  }
}

struct UpdateResult {
  bool performed = false;  // false: buffer held fewer than batch_size entries
  double critic1_loss = 0.0;
  double critic2_loss = 0.0;
  std::optional<double> actor_loss;
};

namespace detail {
inline double critic_step(CriticNet& critic, AdamState& opt, const Batch& batch, const Tensor& y, double lr) {
  Tape tape;
  auto w = bind_parameters(tape, critic.parameters(), true);
  Var q = critic.forward(w, tape.constant(batch.states), tape.constant(batch.actions));
  Var loss = mse(q, tape.constant(y));
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (Var v : w) grads.push_back(tape.grad(v));
  adam_step(critic.parameters(), grads, opt, AdamConfig{.lr = lr});
  return loss.value().item();
}
}  // namespace detail

/// One TD3 iteration: both critics regress on the min-target using the stored
/// actions; every policy_delay-th call also ascends Q1 for the actor and
/// Polyak-averages all three target networks.
inline UpdateResult td3_update(Td3Agent& agent, const ReplayBuffer& buffer) {
  UpdateResult res;
  const Td3Config& cfg = agent.config;
  if (buffer.size() < cfg.batch_size) return res;
  res.performed = true;
  const Batch batch = buffer.sample(cfg.batch_size, agent.rng);
  const Tensor y = compute_target(batch, agent, agent.rng);
  res.critic1_loss = detail::critic_step(agent.critic1, agent.critic1_opt, batch, y, cfg.critic_lr);
  res.critic2_loss = detail::critic_step(agent.critic2, agent.critic2_opt, batch, y, cfg.critic_lr);
  agent.updates += 1;

  if (agent.updates % cfg.policy_delay == 0) {
    Tape tape;
    auto wa = bind_parameters(tape, agent.actor.parameters(), true);
    auto wc = bind_parameters(tape, agent.critic1.parameters(), false);  // frozen
    Var s = tape.constant(batch.states);
    Var q = agent.critic1.forward(wc, s, agent.actor.forward(wa, s));
    Var loss = scale(mean(q), -1.0);
    tape.backward(loss);
    std::vector<Tensor> grads;
    for (Var v : wa) grads.push_back(tape.grad(v));
    adam_step(agent.actor.parameters(), grads, agent.actor_opt, AdamConfig{.lr = cfg.actor_lr});
    res.actor_loss = loss.value().item();
    agent.actor_updates += 1;

    soft_update(agent.critic1_target.parameters(), agent.critic1.parameters(), cfg.tau);
    soft_update(agent.critic2_target.parameters(), agent.critic2.parameters(), cfg.tau);
    soft_update(agent.actor_target.parameters(), agent.actor.parameters(), cfg.tau);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline nlohmann::json params_to_json(const std::vector<Parameter>& ps) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : ps) {
    nlohmann::json e = tensor_to_json(p.value);
    e["name"] = p.name;
    arr.push_back(std::move(e));
  }
  return arr;
}

inline void params_from_json(std::vector<Parameter>& ps, const nlohmann::json& arr) {
  if (arr.size() != ps.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor t = tensor_from_json(arr[i]);
    if (!t.same_shape(ps[i].value) || arr[i].at("name").get<std::string>() != ps[i].name) {
      throw std::runtime_error("checkpoint: parameter '" + ps[i].name + "' shape or name mismatch");
    }
    ps[i].value = std::move(t);
  }
}

inline nlohmann::json adam_to_json(const AdamState& s) {
  nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
  for (const auto& t : s.m) m.push_back(tensor_to_json(t));
  for (const auto& t : s.v) v.push_back(tensor_to_json(t));
  return {{"t", s.t}, {"m", m}, {"v", v}};
}

inline AdamState adam_from_json(const nlohmann::json& j) {
  AdamState s;
  s.t = j.at("t").get<std::uint64_t>();
  for (const auto& t : j.at("m")) s.m.push_back(tensor_from_json(t));
  for (const auto& t : j.at("v")) s.v.push_back(tensor_from_json(t));
  return s;
}

}  // namespace detail

inline nlohmann::json td3_config_to_json(const Td3Config& c) {
  return {{"gamma", c.gamma},
          {"tau", c.tau},
          {"policy_delay", c.policy_delay},
          {"exploration_std", c.exploration_std},
          {"target_noise_std", c.target_noise_std},
          {"target_noise_clip", c.target_noise_clip},
          {"batch_size", c.batch_size},
          {"buffer_capacity", c.buffer_capacity},
          {"hidden", c.hidden},
          {"actor_lr", c.actor_lr},
          {"critic_lr", c.critic_lr},
          {"lo", c.lo},
          {"hi", c.hi}};
}

inline Td3Config td3_config_from_json(const nlohmann::json& j) {
  Td3Config c;
  c.gamma = j.at("gamma").get<double>();
  c.tau = j.at("tau").get<double>();
  c.policy_delay = j.at("policy_delay").get<std::size_t>();
  c.exploration_std = j.at("exploration_std").get<double>();
  c.target_noise_std = j.at("target_noise_std").get<double>();
  c.target_noise_clip = j.at("target_noise_clip").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.buffer_capacity = j.at("buffer_capacity").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.actor_lr = j.at("actor_lr").get<double>();
  c.critic_lr = j.at("critic_lr").get<double>();
  c.lo = j.at("lo").get<double>();
  c.hi = j.at("hi").get<double>();
  return c;
}

/// Text checkpoint holding all six weight sets, optimizer moments, config and rng.
inline std::string serialize_agent(const Td3Agent& a) {
  nlohmann::json j;
  j["format"] = "grain-td3-checkpoint";
  j["version"] = 1;
  j["state_dim"] = a.state_dim();
  j["config"] = td3_config_to_json(a.config);
  j["actor"] = detail::params_to_json(a.actor.parameters());
  j["critic1"] = detail::params_to_json(a.critic1.parameters());
  j["critic2"] = detail::params_to_json(a.critic2.parameters());
  j["actor_target"] = detail::params_to_json(a.actor_target.parameters());
  j["critic1_target"] = detail::params_to_json(a.critic1_target.parameters());
  j["critic2_target"] = detail::params_to_json(a.critic2_target.parameters());
  j["adam"] = {{"actor", detail::adam_to_json(a.actor_opt)},
               {"critic1", detail::adam_to_json(a.critic1_opt)},
               {"critic2", detail::adam_to_json(a.critic2_opt)}};
  j["rng"] = a.rng.serialize();
  j["updates"] = a.updates;
  j["actor_updates"] = a.actor_updates;
  return j.dump(1);
}

inline Td3Agent deserialize_agent(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("format").get<std::string>() != "grain-td3-checkpoint") {
    throw std::runtime_error("checkpoint: unrecognized format tag");
  }
  Td3Agent a(j.at("state_dim").get<std::size_t>(), td3_config_from_json(j.at("config")), 0);
  detail::params_from_json(a.actor.parameters(), j.at("actor"));
  detail::params_from_json(a.critic1.parameters(), j.at("critic1"));
  detail::params_from_json(a.critic2.parameters(), j.at("critic2"));
  detail::params_from_json(a.actor_target.parameters(), j.at("actor_target"));
  detail::params_from_json(a.critic1_target.parameters(), j.at("critic1_target"));
  detail::params_from_json(a.critic2_target.parameters(), j.at("critic2_target"));
  a.actor_opt = detail::adam_from_json(j.at("adam").at("actor"));
  a.critic1_opt = detail::adam_from_json(j.at("adam").at("critic1"));
  a.critic2_opt = detail::adam_from_json(j.at("adam").at("critic2"));
  a.rng = SeededRng::deserialize(j.at("rng").get<std::string>());
  a.updates = j.at("updates").get<std::uint64_t>();
  a.actor_updates = j.at("actor_updates").get<std::uint64_t>();
  return a;
}

inline void save_checkpoint(const Td3Agent& a, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << serialize_agent(a);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline Td3Agent load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_agent(text);
}

}  // namespace grain
