#pragma once

// 2-D particle environments: maze, cooperative navigation, predator-prey.
// State layout is agent-major (pos_x, pos_y, vel_x, vel_y), 4N entries.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "remax/errors.hpp"
#include "remax/nn.hpp"
#include "remax/rng.hpp"

namespace remax::env {

using nn::Vector;

inline constexpr int kFeatures = 4;     // per-agent state features
inline constexpr int kActionSize = 5;   // hold, right, left, up, down

enum ActionIndex : int { kHold = 0, kRight = 1, kLeft = 2, kUp = 3, kDown = 4 };

enum class EnvKind { maze, coop_nav, predator_prey };
enum class Role { agent, predator, prey };

inline std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::maze: return "maze";
    case EnvKind::coop_nav: return "coop_nav";
    case EnvKind::predator_prey: return "predator_prey";
  }
  return "?";
}

inline EnvKind env_kind_from_string(const std::string& s) {
  if (s == "maze") return EnvKind::maze;
  if (s == "coop_nav" || s == "coop-nav" || s == "cooperative_navigation") return EnvKind::coop_nav;
  if (s == "predator_prey" || s == "predator-prey") return EnvKind::predator_prey;
  throw ConfigError("unknown env kind '" + s + "'");
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
  double norm() const { return std::hypot(x, y); }
};

struct Dynamics {
  double max_force = 1.0;
  double damping = 0.5;  // fraction of velocity kept per step
  double dt = 0.1;
  double prey_force_multiplier = 1.3;
};

struct EnvConfig {
  EnvKind kind = EnvKind::maze;
  int n_agents = 1;
  Vec2 lower{0.0, 0.0};
  Vec2 upper{1.0, 1.0};
  int episode_length = 50;
  std::vector<Vec2> landmarks;
  std::vector<Role> roles;
  Vec2 maze_start{1.25, 0.6};
  Dynamics dynamics;
  double occupy_radius = 0.1;
  double capture_radius = 0.1;
  int capture_threshold = 2;
  double capture_reward = 10.0;
  double boundary_penalty = -1.0;

  int state_dim() const { return kFeatures * n_agents; }
  int action_dim() const { return kActionSize * n_agents; }

  int count(Role r) const { return static_cast<int>(std::count(roles.begin(), roles.end(), r)); }

  void validate() const {
    require(n_agents >= 1, "EnvConfig: need at least one agent");
    require(static_cast<int>(roles.size()) == n_agents, "EnvConfig: one role per agent");
    require(lower.x < upper.x && lower.y < upper.y, "EnvConfig: empty arena");
    require(episode_length >= 1, "EnvConfig: episode length must be positive");
    switch (kind) {
      case EnvKind::maze:
        require(n_agents == 1 && landmarks.size() == 1, "EnvConfig: maze has one agent and one landmark");
        break;
      case EnvKind::coop_nav:
        require(static_cast<int>(landmarks.size()) == n_agents, "EnvConfig: coop_nav needs N landmarks");
        break;
      case EnvKind::predator_prey:
        require(count(Role::predator) >= 1 && count(Role::prey) >= 1,
                "EnvConfig: predator_prey needs predators and preys");
        require(capture_threshold >= 1, "EnvConfig: capture threshold must be >= 1");
        break;
    }
  }

  static EnvConfig maze() {
    EnvConfig c;
    c.kind = EnvKind::maze;
    c.n_agents = 1;
    c.lower = {0.0, 0.0};
    c.upper = {1.5, 1.5};
    c.landmarks = {{0.25, 0.9}};
    c.roles = {Role::agent};
    c.maze_start = {1.25, 0.6};
    return c;
  }

  // Landmarks at the corners, then the side midpoints; a circle beyond eight.
  static EnvConfig coop_nav(int n) {
    require(n >= 1, "coop_nav: need at least one agent");
    EnvConfig c;
    c.kind = EnvKind::coop_nav;
    c.n_agents = n;
    c.lower = {0.0, 0.0};
    c.upper = {1.0, 1.0};
    c.roles.assign(static_cast<std::size_t>(n), Role::agent);
    static const Vec2 kFixed[] = {{0.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}, {1.0, 0.0},
                                  {0.5, 0.0}, {0.5, 1.0}, {0.0, 0.5}, {1.0, 0.5}};
    if (n <= 8) {
      c.landmarks.assign(std::begin(kFixed), std::begin(kFixed) + n);
    } else {
      for (int i = 0; i < n; ++i) {
        const double a = 2.0 * std::numbers::pi * i / n;
        c.landmarks.push_back({0.5 + 0.4 * std::cos(a), 0.5 + 0.4 * std::sin(a)});
      }
    }
    return c;
  }

  static EnvConfig predator_prey(int predators, int preys) {
    require(predators >= 1 && preys >= 1, "predator_prey: need predators and preys");
    EnvConfig c;
    c.kind = EnvKind::predator_prey;
    c.n_agents = predators + preys;
    c.lower = {0.0, 0.0};
    c.upper = {1.0, 1.0};
    c.roles.assign(static_cast<std::size_t>(predators), Role::predator);
    c.roles.insert(c.roles.end(), static_cast<std::size_t>(preys), Role::prey);
    c.capture_threshold = predators >= 6 ? 3 : 2;
    return c;
  }

  static EnvConfig make(EnvKind kind, int agents) {
    switch (kind) {
      case EnvKind::maze: return maze();
      case EnvKind::coop_nav: return coop_nav(agents);
      case EnvKind::predator_prey: {
        // 3 predators per prey (3v1, 6v2, 9v3)
        const int preys = std::max(1, agents / 4);
        return predator_prey(agents - preys, preys);
      }
    }
    return maze();
  }
};

struct Particle {
  Vec2 pos;
  Vec2 vel;
  friend bool operator==(const Particle&, const Particle&) = default;
};

struct WorldState {
  std::vector<Particle> agents;

  int size() const { return static_cast<int>(agents.size()); }

  Vector flatten() const {
    Vector v(kFeatures * size());
    for (int i = 0; i < size(); ++i) {
      const auto& a = agents[static_cast<std::size_t>(i)];
      v[4 * i + 0] = a.pos.x;
      v[4 * i + 1] = a.pos.y;
      v[4 * i + 2] = a.vel.x;
      v[4 * i + 3] = a.vel.y;
    }
    return v;
  }

  static WorldState unflatten(const Vector& v) {
    require(v.size() % kFeatures == 0, "WorldState: flat length must be a multiple of 4");
    WorldState s;
    const auto n = v.size() / kFeatures;
    s.agents.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      s.agents[static_cast<std::size_t>(i)] = {{v[4 * i], v[4 * i + 1]}, {v[4 * i + 2], v[4 * i + 3]}};
    return s;
  }

  bool all_finite() const {
    for (const auto& a : agents)
      if (!std::isfinite(a.pos.x) || !std::isfinite(a.pos.y) || !std::isfinite(a.vel.x) ||
          !std::isfinite(a.vel.y))
        return false;
    return true;
  }

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

// Per-agent 5-vectors, agent-major, entries in [0,1].
using JointAction = Vector;

struct StepResult {
  WorldState next;
  std::vector<double> rewards;
  bool success = false;
  int boundary_hits = 0;

  // Every agent observes the full flattened state.
  Vector observation() const { return next.flatten(); }
};

inline WorldState default_initial_state(const EnvConfig& cfg, Rng& rng) {
  cfg.validate();
  WorldState s;
  s.agents.resize(static_cast<std::size_t>(cfg.n_agents));
  switch (cfg.kind) {
    case EnvKind::maze:
      s.agents[0] = {cfg.maze_start, {0.0, 0.0}};
      break;
    case EnvKind::coop_nav: {
      const Vec2 center = 0.5 * (cfg.lower + cfg.upper);
      for (auto& a : s.agents) a = {center, {0.0, 0.0}};
      break;
    }
    case EnvKind::predator_prey:
      for (auto& a : s.agents) {
        const double x = rng.uniform(cfg.lower.x, cfg.upper.x);
        const double y = rng.uniform(cfg.lower.y, cfg.upper.y);
        a = {{x, y}, {0.0, 0.0}};
      }
      break;
  }
  return s;
}

// Greedy agent -> nearest free landmark matching inside the occupation radius.
// Returns how many landmarks are held by distinct agents.
inline int occupied_landmarks(const EnvConfig& cfg, const WorldState& s) {
  std::vector<bool> taken(cfg.landmarks.size(), false);
  int held = 0;
  for (const auto& a : s.agents) {
    int best = -1;
    double best_d = cfg.occupy_radius;
    for (std::size_t l = 0; l < cfg.landmarks.size(); ++l) {
      if (taken[l]) continue;
      const double d = (a.pos - cfg.landmarks[l]).norm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(l);
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      ++held;
    }
  }
  return held;
}

class Episode {
 public:
  Episode(EnvConfig cfg, WorldState init) : cfg_(std::move(cfg)), state_(std::move(init)) {
    cfg_.validate();
    require(state_.size() == cfg_.n_agents, "reset_to: state has " + std::to_string(state_.size()) +
                                                " agents, env expects " + std::to_string(cfg_.n_agents));
    require(state_.all_finite(), "reset_to: non-finite state");
    for (auto& a : state_.agents) a.pos = clamp(a.pos);
  }

  const EnvConfig& config() const { return cfg_; }
  const WorldState& state() const { return state_; }
  Vector observation() const { return state_.flatten(); }
  int timestep() const { return t_; }
  bool finished() const { return t_ >= cfg_.episode_length; }
  bool success() const { return success_; }

  StepResult step(const JointAction& actions) {
    require(!finished(), "step: episode already finished");
    require(actions.size() == cfg_.action_dim(), "step: joint action has wrong length");
    for (Eigen::Index i = 0; i < actions.size(); ++i)
      require(actions[i] >= 0.0 && actions[i] <= 1.0 && std::isfinite(actions[i]),
              "step: action entries must lie in [0,1]");

    StepResult r;
    r.rewards.assign(static_cast<std::size_t>(cfg_.n_agents), 0.0);
    const auto& d = cfg_.dynamics;
    for (int i = 0; i < cfg_.n_agents; ++i) {
      auto& a = state_.agents[static_cast<std::size_t>(i)];
      const auto act = actions.segment(kActionSize * i, kActionSize);
      double fmax = d.max_force;
      if (cfg_.roles[static_cast<std::size_t>(i)] == Role::prey) fmax *= d.prey_force_multiplier;
      const Vec2 force{(act[kRight] - act[kLeft]) * fmax, (act[kUp] - act[kDown]) * fmax};
      a.vel = d.damping * a.vel + d.dt * force;
      const Vec2 moved = a.pos + d.dt * a.vel;
      a.pos = clamp(moved);
      if (!(a.pos == moved)) {
        r.rewards[static_cast<std::size_t>(i)] += cfg_.boundary_penalty;
        ++r.boundary_hits;
      }
    }

    bool hit = false;
    switch (cfg_.kind) {
      case EnvKind::maze:
        hit = (state_.agents[0].pos - cfg_.landmarks[0]).norm() < cfg_.occupy_radius;
        if (hit) r.rewards[0] += 1.0;
        break;
      case EnvKind::coop_nav:
        hit = occupied_landmarks(cfg_, state_) == static_cast<int>(cfg_.landmarks.size());
        if (hit)
          for (auto& x : r.rewards) x += 1.0;
        break;
      case EnvKind::predator_prey:
        hit = apply_captures(r.rewards);
        break;
    }
    if (hit) success_ = true;
    r.success = hit;
    ++t_;
    r.next = state_;
    return r;
  }

 private:
  Vec2 clamp(Vec2 p) const {
    return {std::clamp(p.x, cfg_.lower.x, cfg_.upper.x), std::clamp(p.y, cfg_.lower.y, cfg_.upper.y)};
  }

  bool apply_captures(std::vector<double>& rewards) const {
    bool any = false;
    for (int j = 0; j < cfg_.n_agents; ++j) {
      if (cfg_.roles[static_cast<std::size_t>(j)] != Role::prey) continue;
      int near = 0;
      for (int i = 0; i < cfg_.n_agents; ++i) {
        if (cfg_.roles[static_cast<std::size_t>(i)] != Role::predator) continue;
        const auto& pi = state_.agents[static_cast<std::size_t>(i)].pos;
        const auto& pj = state_.agents[static_cast<std::size_t>(j)].pos;
        if ((pi - pj).norm() < cfg_.capture_radius) ++near;
      }
      if (near >= cfg_.capture_threshold) {
        rewards[static_cast<std::size_t>(j)] -= cfg_.capture_reward;
        any = true;
      }
    }
    if (any)
      for (int i = 0; i < cfg_.n_agents; ++i)
        if (cfg_.roles[static_cast<std::size_t>(i)] == Role::predator)
          rewards[static_cast<std::size_t>(i)] += cfg_.capture_reward;
    return any;
  }

  EnvConfig cfg_;
  WorldState state_;
  int t_ = 0;
  bool success_ = false;
};

inline Episode reset_to(const EnvConfig& cfg, const WorldState& s) { return Episode(cfg, s); }

inline Episode reset_to(const EnvConfig& cfg, const Vector& flat) {
  require(flat.size() == cfg.state_dim(), "reset_to: state dimension " + std::to_string(flat.size()) +
                                              " != " + std::to_string(cfg.state_dim()));
  return Episode(cfg, WorldState::unflatten(flat));
}

inline bool is_task_success(const Episode& ep) { return ep.success(); }

}  // namespace remax::env
