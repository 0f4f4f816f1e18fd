#pragma once

// Multi-agent DDPG: per-agent softmax policies and centralized critics over
// (joint observation, joint action), with target copies and uniform replay.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "remax/errors.hpp"
#include "remax/nn.hpp"
#include "remax/rng.hpp"

namespace remax::maddpg {

using nn::Matrix;
using nn::MlpParams;
using nn::Vector;

inline constexpr int kActionSize = 5;

struct MaddpgConfig {
  std::vector<int> hidden{64, 64};
  double actor_lr = 1e-2;
  double critic_lr = 1e-2;
  double tau = 1e-2;
  double gamma = 0.95;
  std::size_t buffer_capacity = 1'000'000;
  std::size_t batch_size = 1024;
  // Environment steps between update rounds (one critic + actor step per agent).
  int update_every = 1;
  double noise_start = 0.3;
  double noise_end = 0.0;
  double noise_anneal_fraction = 0.5;  // of the episode budget
  // Penalty on the mean squared pre-softmax policy logits in the actor loss.
  double logit_penalty = 1e-3;
};

struct AgentLearner {
  MlpParams policy;
  MlpParams critic;
  MlpParams target_policy;
  MlpParams target_critic;
  nn::AdamState policy_opt;
  nn::AdamState critic_opt;
};

struct LearnerSet {
  int n_agents = 0;
  int obs_dim = 0;  // joint observation (global state) length
  MaddpgConfig config;
  std::vector<AgentLearner> agents;

  int action_dim() const { return kActionSize * n_agents; }
  int critic_input_dim() const { return obs_dim + action_dim(); }
};

inline nn::MlpSpec policy_spec(int obs_dim, const std::vector<int>& hidden) {
  std::vector<int> sizes{obs_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(kActionSize);
  return {sizes, nn::HiddenActivation::relu(), nn::OutputKind::softmax};
}

inline nn::MlpSpec critic_spec(int input_dim, const std::vector<int>& hidden) {
  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return {sizes, nn::HiddenActivation::relu(), nn::OutputKind::identity};
}

inline LearnerSet make_learners(int n_agents, int obs_dim, const MaddpgConfig& cfg, Rng& rng) {
  require(n_agents >= 1 && obs_dim >= 1, "make_learners: bad dimensions");
  LearnerSet s;
  s.n_agents = n_agents;
  s.obs_dim = obs_dim;
  s.config = cfg;
  const auto pspec = policy_spec(obs_dim, cfg.hidden);
  const auto cspec = critic_spec(obs_dim + kActionSize * n_agents, cfg.hidden);
  for (int i = 0; i < n_agents; ++i) {
    AgentLearner a;
    a.policy = nn::xavier_init(pspec, rng);
    a.critic = nn::xavier_init(cspec, rng);
    a.target_policy = a.policy;
    a.target_critic = a.critic;
    a.policy_opt = nn::AdamState::for_params(a.policy);
    a.critic_opt = nn::AdamState::for_params(a.critic);
    s.agents.push_back(std::move(a));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Replay

struct Transition {
  Vector obs;       // 4N
  Vector action;    // 5N
  Vector rewards;   // N
  Vector next_obs;  // 4N
};

struct Minibatch {
  Matrix obs;       // 4N x B
  Matrix actions;   // 5N x B
  Matrix rewards;   // N x B
  Matrix next_obs;  // 4N x B

  Eigen::Index size() const { return obs.cols(); }
};

// Fixed-capacity ring buffer with FIFO eviction and uniform sampling (with
// replacement).
class ReplayBuffer {
 public:
  ReplayBuffer(int obs_dim, int action_dim, int n_agents, std::size_t capacity)
      : obs_dim_(obs_dim), action_dim_(action_dim), n_agents_(n_agents), capacity_(capacity) {
    require(capacity >= 1, "ReplayBuffer: capacity must be positive");
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  int obs_dim() const { return obs_dim_; }
  int action_dim() const { return action_dim_; }
  int n_agents() const { return n_agents_; }
  std::size_t next_slot() const { return head_; }

  void add(const Transition& t) {
    require(t.obs.size() == obs_dim_ && t.next_obs.size() == obs_dim_ && t.action.size() == action_dim_ &&
                t.rewards.size() == n_agents_,
            "ReplayBuffer: transition dimensions do not match");
    require(t.obs.allFinite() && t.action.allFinite() && t.rewards.allFinite() && t.next_obs.allFinite(),
            "ReplayBuffer: non-finite transition");
    if (size_ < capacity_) {
      grow_to(size_ + 1);
      ++size_;
    }
    put(head_, t);
    head_ = (head_ + 1) % capacity_;
  }

  // Slot `k` in insertion order among the currently stored transitions (0 = oldest).
  Transition at(std::size_t k) const {
    require(k < size_, "ReplayBuffer: index out of range");
    const std::size_t slot = size_ < capacity_ ? k : (head_ + k) % capacity_;
    return get(slot);
  }

  Minibatch sample(std::size_t batch, Rng& rng) const {
    require(batch >= 1 && batch <= size_, "ReplayBuffer: sample size exceeds stored transitions");
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.index(size_);
    return gather(idx);
  }

  Minibatch gather(const std::vector<std::size_t>& slots) const {
    const auto b = static_cast<Eigen::Index>(slots.size());
    Minibatch m{Matrix(obs_dim_, b), Matrix(action_dim_, b), Matrix(n_agents_, b), Matrix(obs_dim_, b)};
    for (Eigen::Index c = 0; c < b; ++c) {
      const auto s = static_cast<Eigen::Index>(slots[static_cast<std::size_t>(c)]);
      m.obs.col(c) = obs_.col(s);
      m.actions.col(c) = actions_.col(s);
      m.rewards.col(c) = rewards_.col(s);
      m.next_obs.col(c) = next_obs_.col(s);
    }
    return m;
  }

  // Raw storage access for checkpointing.
  const Matrix& obs_storage() const { return obs_; }
  const Matrix& action_storage() const { return actions_; }
  const Matrix& reward_storage() const { return rewards_; }
  const Matrix& next_obs_storage() const { return next_obs_; }

  void restore(Matrix obs, Matrix actions, Matrix rewards, Matrix next_obs, std::size_t size, std::size_t head) {
    require(obs.rows() == obs_dim_ && actions.rows() == action_dim_ && rewards.rows() == n_agents_ &&
                next_obs.rows() == obs_dim_ && size <= capacity_ && head < capacity_ &&
                static_cast<std::size_t>(obs.cols()) >= size,
            "ReplayBuffer: restored storage does not match");
    obs_ = std::move(obs);
    actions_ = std::move(actions);
    rewards_ = std::move(rewards);
    next_obs_ = std::move(next_obs);
    size_ = size;
    head_ = head;
  }

 private:
  void grow_to(std::size_t n) {
    if (static_cast<std::size_t>(obs_.cols()) >= n) return;
    const auto cols = static_cast<Eigen::Index>(std::min(capacity_, std::max<std::size_t>(n, 2 * obs_.cols() + 64)));
    obs_.conservativeResize(obs_dim_, cols);
    actions_.conservativeResize(action_dim_, cols);
    rewards_.conservativeResize(n_agents_, cols);
    next_obs_.conservativeResize(obs_dim_, cols);
  }

  void put(std::size_t slot, const Transition& t) {
    const auto s = static_cast<Eigen::Index>(slot);
    obs_.col(s) = t.obs;
    actions_.col(s) = t.action;
    rewards_.col(s) = t.rewards;
    next_obs_.col(s) = t.next_obs;
  }

  Transition get(std::size_t slot) const {
    const auto s = static_cast<Eigen::Index>(slot);
    return {obs_.col(s), actions_.col(s), rewards_.col(s), next_obs_.col(s)};
  }

  int obs_dim_;
  int action_dim_;
  int n_agents_;
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t head_ = 0;
  Matrix obs_, actions_, rewards_, next_obs_;
};

// ---------------------------------------------------------------------------
// Acting

// Noiseless softmax outputs of every policy, stacked agent-major (5N).
inline Vector policy_actions(const LearnerSet& ls, const Vector& obs) {
  require(obs.size() == ls.obs_dim, "act: observation has wrong dimension");
  Vector a(ls.action_dim());
  for (int i = 0; i < ls.n_agents; ++i)
    a.segment(kActionSize * i, kActionSize) = nn::evaluate(ls.agents[static_cast<std::size_t>(i)].policy, obs);
  return a;
}

// Additive Gaussian perturbation, before clamping.
inline Vector add_exploration_noise(const Vector& a, double scale, Rng& rng) {
  if (scale <= 0.0) return a;
  Vector out = a;
  for (Eigen::Index k = 0; k < out.size(); ++k) out[k] += rng.normal(0.0, scale);
  return out;
}

inline Vector act(const LearnerSet& ls, const Vector& obs, double noise_scale, Rng& rng) {
  return add_exploration_noise(policy_actions(ls, obs), noise_scale, rng).cwiseMax(0.0).cwiseMin(1.0);
}

// Linearly annealed noise scale for a given (1-based) episode.
inline double noise_scale(const MaddpgConfig& cfg, int episode, int max_episodes) {
  const double horizon = cfg.noise_anneal_fraction * max_episodes;
  if (horizon <= 0.0) return cfg.noise_end;
  const double frac = std::min(1.0, static_cast<double>(episode - 1) / horizon);
  return cfg.noise_start + (cfg.noise_end - cfg.noise_start) * frac;
}

// ---------------------------------------------------------------------------
// Updates

inline Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix m(top.rows() + bottom.rows(), top.cols());
  m.topRows(top.rows()) = top;
  m.bottomRows(bottom.rows()) = bottom;
  return m;
}

// Joint actions of the target policies at the next observations (5N x B).
inline Matrix target_actions(const LearnerSet& ls, const Matrix& next_obs) {
  Matrix a(ls.action_dim(), next_obs.cols());
  for (int j = 0; j < ls.n_agents; ++j)
    a.middleRows(kActionSize * j, kActionSize) = nn::evaluate(ls.agents[static_cast<std::size_t>(j)].target_policy, next_obs);
  return a;
}

inline double td_target(double reward, double gamma, double q_next) { return reward + gamma * q_next; }

// TD targets y_i for a minibatch (1 x B).
inline Matrix td_targets(const LearnerSet& ls, int i, const Minibatch& b, const Matrix& next_actions) {
  const auto& ag = ls.agents[static_cast<std::size_t>(i)];
  const Matrix q_next = nn::evaluate(ag.target_critic, stack(b.next_obs, next_actions));
  return (b.rewards.row(i) + ls.config.gamma * q_next).eval();
}

// One Adam step on critic i. Returns the pre-step mean squared TD loss.
inline double critic_update(LearnerSet& ls, int i, const Minibatch& b, const Matrix& next_actions) {
  require(i >= 0 && i < ls.n_agents, "critic_update: agent index out of range");
  auto& ag = ls.agents[static_cast<std::size_t>(i)];
  const Matrix y = td_targets(ls, i, b, next_actions);
  auto fwd = nn::forward(ag.critic, stack(b.obs, b.actions));
  const Matrix diff = fwd.output - y;
  const double n = static_cast<double>(b.size());
  const double loss = diff.squaredNorm() / n;
  if (!std::isfinite(loss)) throw DivergedError("critic_update: non-finite TD loss for agent " + std::to_string(i));
  const Matrix upstream = (2.0 / n) * diff;
  auto g = nn::backward(ag.critic, fwd.tape, upstream);
  nn::adam_step(ag.critic, g.params, ag.critic_opt, ls.config.critic_lr);
  return loss;
}

struct ActorGradient {
  double objective = 0.0;  // mean Q_i with a_i = mu_i(o)
  MlpParams grads;         // d(objective - penalty * mean(logits^2))/d(policy params)
};

inline ActorGradient actor_gradient(const LearnerSet& ls, int i, const Minibatch& b) {
  require(i >= 0 && i < ls.n_agents, "actor_update: agent index out of range");
  const auto& ag = ls.agents[static_cast<std::size_t>(i)];
  auto pol = nn::forward(ag.policy, b.obs);
  Matrix joint = b.actions;
  joint.middleRows(kActionSize * i, kActionSize) = pol.output;
  auto q = nn::forward(ag.critic, stack(b.obs, joint));
  const double n = static_cast<double>(b.size());
  ActorGradient out;
  out.objective = q.output.sum() / n;
  const Matrix upstream = Matrix::Constant(1, b.size(), 1.0 / n);
  auto cg = nn::backward(ag.critic, q.tape, upstream, nn::GradTarget::input_only);
  const Matrix da = cg.input.middleRows(ls.obs_dim + kActionSize * i, kActionSize);
  const Matrix& logits = pol.tape.pre.back();
  const Matrix d_logits = (-2.0 * ls.config.logit_penalty / static_cast<double>(logits.size())) * logits;
  out.grads = nn::backward(ag.policy, pol.tape, da, nn::GradTarget::params_and_input, &d_logits).params;
  return out;
}

// One Adam ascent step on policy i through critic i. Returns the pre-step
// objective estimate.
inline double actor_update(LearnerSet& ls, int i, const Minibatch& b) {
  auto g = actor_gradient(ls, i, b);
  if (!std::isfinite(g.objective)) throw DivergedError("actor_update: non-finite objective for agent " + std::to_string(i));
  nn::scale_in_place(g.grads, -1.0);
  auto& ag = ls.agents[static_cast<std::size_t>(i)];
  nn::adam_step(ag.policy, g.grads, ag.policy_opt, ls.config.actor_lr);
  return g.objective;
}

inline void soft_update_targets(LearnerSet& ls, double tau) {
  for (auto& ag : ls.agents) {
    nn::soft_update(ag.target_policy, ag.policy, tau);
    nn::soft_update(ag.target_critic, ag.critic, tau);
  }
}

struct UpdateStats {
  std::vector<double> critic_loss;
  std::vector<double> actor_objective;
};

// Sample one minibatch, update every agent's critic then actor, then move the
// targets.
inline UpdateStats update_round(LearnerSet& ls, const ReplayBuffer& buffer, Rng& rng) {
  const auto batch = buffer.sample(ls.config.batch_size, rng);
  const Matrix next_actions = target_actions(ls, batch.next_obs);
  UpdateStats st;
  for (int i = 0; i < ls.n_agents; ++i) {
    st.critic_loss.push_back(critic_update(ls, i, batch, next_actions));
    st.actor_objective.push_back(actor_update(ls, i, batch));
  }
  soft_update_targets(ls, ls.config.tau);
  return st;
}

}  // namespace remax::maddpg
