#pragma once

// Training orchestration: explorer strategies, the episode loop with periodic
// explorer refreshes and default-start evaluations, and the evaluation
// metrics (episodes-to-completion, occupation rate, predator returns).

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "remax/config.hpp"
#include "remax/envs.hpp"
#include "remax/errors.hpp"
#include "remax/gene.hpp"
#include "remax/maddpg.hpp"
#include "remax/remax.hpp"
#include "remax/rng.hpp"

namespace remax::harness {

using relational::InitialState;
using relational::InitSource;

// ---------------------------------------------------------------------------
// Explorers

class Explorer {
 public:
  virtual ~Explorer() = default;
  virtual std::string name() const = 0;
  virtual InitialState pick(const env::EnvConfig& cfg, Rng& rng) = 0;
  virtual void observe(const maddpg::Transition&) {}
  // Called every refresh_period training episodes.
  virtual void refresh(const maddpg::LearnerSet&, Rng&) {}
};

class RandomExplorer final : public Explorer {
 public:
  std::string name() const override { return "random"; }
  InitialState pick(const env::EnvConfig& cfg, Rng& rng) override {
    return {env::default_initial_state(cfg, rng), InitSource::default_start};
  }
};

class RemaxExplorer final : public Explorer {
 public:
  RemaxExplorer(const relational::RemaxConfig& cfg, Rng& rng, std::string dump_dir = {})
      : model_(relational::make_model(cfg, rng)), dump_dir_(std::move(dump_dir)) {}

  std::string name() const override { return "remax"; }

  InitialState pick(const env::EnvConfig& cfg, Rng& rng) override {
    return relational::pick_initial_state(pool_, cfg, rng);
  }

  void observe(const maddpg::Transition& t) override { window_.push_back(t); }

  void refresh(const maddpg::LearnerSet& ls, Rng& rng) override {
    if (window_.empty()) return;
    const auto scored = relational::score_states(window_, ls, model_.config, rng);
    auto r = relational::reinit_and_refresh(model_, scored, rng);
    ++refreshes_;
    if (!dump_dir_.empty())
      relational::write_refresh_dump(dump_dir_ + "/refresh_" + std::to_string(refreshes_) + ".csv", r);
    pool_ = std::move(r.pool);
    window_.clear();
  }

  const relational::GenerationPool& pool() const { return pool_; }
  const relational::RemaxModel& model() const { return model_; }
  std::size_t window_size() const { return window_.size(); }

 private:
  relational::RemaxModel model_;
  relational::GenerationPool pool_;
  std::vector<maddpg::Transition> window_;
  std::string dump_dir_;
  int refreshes_ = 0;
};

class GeneExplorer final : public Explorer {
 public:
  GeneExplorer(const gene::GeneConfig& cfg, Rng& rng) : vae_(gene::make_vae(cfg, rng)) {}

  std::string name() const override { return "gene"; }

  InitialState pick(const env::EnvConfig& cfg, Rng& rng) override {
    return relational::pick_initial_state(pool_, cfg, rng);
  }

  void observe(const maddpg::Transition& t) override { window_.push_back(t.obs); }

  void refresh(const maddpg::LearnerSet&, Rng& rng) override {
    if (window_.empty()) return;
    if (window_.size() > vae_.config.max_states) {
      for (std::size_t i = 0; i < vae_.config.max_states; ++i)
        std::swap(window_[i], window_[i + rng.index(window_.size() - i)]);
      window_.resize(vae_.config.max_states);
    }
    auto r = gene::reinit_and_refresh(vae_, window_, rng);
    pool_ = std::move(r.pool);
    window_.clear();
  }

  const relational::GenerationPool& pool() const { return pool_; }

 private:
  gene::VaeModel vae_;
  relational::GenerationPool pool_;
  std::vector<nn::Vector> window_;
};

inline std::unique_ptr<Explorer> make_explorer(const ExperimentConfig& c, Rng& rng, const std::string& dump_dir = {}) {
  switch (c.explorer) {
    case ExplorerKind::random: return std::make_unique<RandomExplorer>();
    case ExplorerKind::remax: return std::make_unique<RemaxExplorer>(c.remax, rng, dump_dir);
    case ExplorerKind::gene: return std::make_unique<GeneExplorer>(c.gene, rng);
  }
  return std::make_unique<RandomExplorer>();
}

// ---------------------------------------------------------------------------
// Metrics

inline constexpr const char* kSourceDefault = "default";
inline constexpr const char* kSourceGenerated = "generated";
inline constexpr const char* kSourceEval = "eval_default";

struct MetricRow {
  int episode = 0;
  std::string init_source;  // default | generated | eval_default
  bool success = false;
  double return_mean = 0.0;
  int consec_successes = 0;
  double wall_ms = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

// Counts consecutive successful default-start evaluation episodes.
class SuccessTracker {
 public:
  explicit SuccessTracker(int required = 10) : required_(required) {}

  void record(bool success, int episode) {
    streak_ = success ? streak_ + 1 : 0;
    if (!completion_ && streak_ >= required_) completion_ = episode;
  }

  int streak() const { return streak_; }
  std::optional<int> completion() const { return completion_; }
  bool complete() const { return completion_.has_value(); }

 private:
  int required_;
  int streak_ = 0;
  std::optional<int> completion_;
};

struct RunSummary {
  std::uint64_t seed = 0;
  std::string env;
  std::string explorer;
  int budget = 0;
  std::optional<int> completion_episode;
  int episodes_run = 0;
  int eval_episodes = 0;
  int refreshes = 0;
  long long env_steps = 0;
  int generated_starts = 0;
  double mean_return = 0.0;
  std::optional<double> occupation_rate;
};

struct RunMetrics {
  std::vector<MetricRow> rows;
  RunSummary summary;
};

struct RunResult {
  RunMetrics metrics;
  maddpg::LearnerSet learners;
};

// ---------------------------------------------------------------------------
// Rollouts

using Policy = std::function<env::JointAction(const nn::Vector& obs)>;

inline Policy greedy_policy(const maddpg::LearnerSet& ls) {
  return [&ls](const nn::Vector& obs) { return maddpg::policy_actions(ls, obs); };
}

struct Rollout {
  bool success = false;
  std::vector<double> returns;  // per agent
  env::WorldState final_state;
};

inline Rollout rollout(const env::EnvConfig& cfg, const env::WorldState& init, const Policy& policy) {
  auto ep = env::reset_to(cfg, init);
  Rollout r;
  r.returns.assign(static_cast<std::size_t>(cfg.n_agents), 0.0);
  while (!ep.finished()) {
    const auto res = ep.step(policy(ep.observation()));
    for (std::size_t i = 0; i < r.returns.size(); ++i) r.returns[i] += res.rewards[i];
  }
  r.success = ep.success();
  r.final_state = ep.state();
  return r;
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Mean over episodes of (distinct landmarks held at the final step) / N.
inline double evaluate_occupation_rate(const Policy& policy, const env::EnvConfig& cfg, int n_episodes, Rng& rng) {
  require(cfg.kind == env::EnvKind::coop_nav, "evaluate_occupation_rate: needs a cooperative-navigation env");
  require(n_episodes >= 1, "evaluate_occupation_rate: need at least one episode");
  double acc = 0.0;
  for (int e = 0; e < n_episodes; ++e) {
    const auto r = rollout(cfg, env::default_initial_state(cfg, rng), policy);
    acc += static_cast<double>(env::occupied_landmarks(cfg, r.final_state)) / cfg.n_agents;
  }
  return acc / n_episodes;
}

inline double evaluate_occupation_rate(const maddpg::LearnerSet& ls, const env::EnvConfig& cfg, int n_episodes,
                                       Rng& rng) {
  return evaluate_occupation_rate(greedy_policy(ls), cfg, n_episodes, rng);
}

// Predators act with one learner set, preys with another (e.g. a frozen
// prey trained under random exploration).
inline Policy predator_prey_policy(const maddpg::LearnerSet& predators, const maddpg::LearnerSet& preys,
                                   const env::EnvConfig& cfg) {
  require(predators.n_agents == cfg.n_agents && preys.n_agents == cfg.n_agents,
          "predator_prey_policy: learner sets must match the environment");
  return [&predators, &preys, roles = cfg.roles](const nn::Vector& obs) {
    nn::Vector a = maddpg::policy_actions(predators, obs);
    const nn::Vector b = maddpg::policy_actions(preys, obs);
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == env::Role::prey)
        a.segment(env::kActionSize * static_cast<Eigen::Index>(i), env::kActionSize) =
            b.segment(env::kActionSize * static_cast<Eigen::Index>(i), env::kActionSize);
    return a;
  };
}

// Mean over episodes of the mean per-predator undiscounted return.
inline double mean_predator_return(const std::vector<double>& per_episode) { return mean(per_episode); }

inline double evaluate_returns(const Policy& policy, const env::EnvConfig& cfg, int n_episodes, Rng& rng) {
  require(cfg.kind == env::EnvKind::predator_prey, "evaluate_returns: needs a predator-prey env");
  require(n_episodes >= 1, "evaluate_returns: need at least one episode");
  std::vector<double> per_episode;
  for (int e = 0; e < n_episodes; ++e) {
    const auto r = rollout(cfg, env::default_initial_state(cfg, rng), policy);
    double acc = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < r.returns.size(); ++i)
      if (cfg.roles[i] == env::Role::predator) {
        acc += r.returns[i];
        ++n;
      }
    per_episode.push_back(acc / n);
  }
  return mean_predator_return(per_episode);
}

inline double evaluate_returns(const maddpg::LearnerSet& predators, const maddpg::LearnerSet& frozen_prey,
                               const env::EnvConfig& cfg, int n_episodes, Rng& rng) {
  return evaluate_returns(predator_prey_policy(predators, frozen_prey, cfg), cfg, n_episodes, rng);
}

// ---------------------------------------------------------------------------
// Training

struct TrainingHooks {
  // Called after each training episode with (episode, learners).
  std::function<void(int, const maddpg::LearnerSet&)> after_episode;
};

inline RunResult run_training(const ExperimentConfig& cfg, std::uint64_t seed, const TrainingHooks& hooks = {}) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto& ecfg = cfg.env;

  Rng master(seed);
  Rng init_rng = master.split();
  Rng env_rng = master.split();
  Rng act_rng = master.split();
  Rng update_rng = master.split();
  Rng explorer_rng = master.split();
  Rng eval_rng = master.split();

  RunResult out{{}, maddpg::make_learners(ecfg.n_agents, ecfg.state_dim(), cfg.maddpg, init_rng)};
  auto& learners = out.learners;
  maddpg::ReplayBuffer buffer(ecfg.state_dim(), ecfg.action_dim(), ecfg.n_agents, cfg.maddpg.buffer_capacity);

  std::string dump_dir;
  if (cfg.dump_refreshes && cfg.explorer == ExplorerKind::remax) {
    dump_dir = cfg.output_dir + "/refresh_seed" + std::to_string(seed);
    std::filesystem::create_directories(dump_dir);
  }
  auto explorer = make_explorer(cfg, init_rng, dump_dir);
  SuccessTracker tracker(cfg.completion_streak);

  auto& rows = out.metrics.rows;
  auto& sum = out.metrics.summary;
  sum.seed = seed;
  sum.env = env::to_string(ecfg.kind);
  sum.explorer = explorer->name();
  sum.budget = cfg.max_episodes;

  const auto start = Clock::now();
  auto wall = [&] {
    if (!cfg.record_wall_clock) return 0.0;
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  };

  long long steps = 0;
  double return_acc = 0.0;
  for (int episode = 1; episode <= cfg.max_episodes; ++episode) {
    try {
      const double noise = maddpg::noise_scale(cfg.maddpg, episode, cfg.max_episodes);
      const auto init = explorer->pick(ecfg, env_rng);
      auto ep = env::reset_to(ecfg, init.state);
      std::vector<double> returns(static_cast<std::size_t>(ecfg.n_agents), 0.0);
      while (!ep.finished()) {
        const nn::Vector obs = ep.observation();
        const nn::Vector action = maddpg::act(learners, obs, noise, act_rng);
        const auto res = ep.step(action);
        maddpg::Transition t{obs, action, Eigen::Map<const nn::Vector>(res.rewards.data(), ecfg.n_agents),
                             res.next.flatten()};
        buffer.add(t);
        explorer->observe(t);
        for (std::size_t i = 0; i < returns.size(); ++i) returns[i] += res.rewards[i];
        ++steps;
        if (buffer.size() >= cfg.maddpg.batch_size && steps % cfg.maddpg.update_every == 0)
          maddpg::update_round(learners, buffer, update_rng);
      }
      const double ret = mean(returns);
      return_acc += ret;
      if (init.source == InitSource::generated) ++sum.generated_starts;
      rows.push_back({episode, relational::to_string(init.source), ep.success(), ret, tracker.streak(), wall()});
      sum.episodes_run = episode;
      if (hooks.after_episode) hooks.after_episode(episode, learners);

      if (episode % cfg.refresh_period == 0 && cfg.explorer != ExplorerKind::random) {
        explorer->refresh(learners, explorer_rng);
        ++sum.refreshes;
      }
      if (episode % cfg.eval_every == 0) {
        const auto r = rollout(ecfg, env::default_initial_state(ecfg, eval_rng), greedy_policy(learners));
        steps += ecfg.episode_length;
        ++sum.eval_episodes;
        tracker.record(r.success, episode);
        rows.push_back({episode, kSourceEval, r.success, mean(r.returns), tracker.streak(), wall()});
        if (tracker.complete() && cfg.stop_at_completion) break;
      }
    } catch (const DivergedError& e) {
      throw DivergedError(std::string(e.what()) + " (episode " + std::to_string(episode) + ")");
    } catch (const ContractError& e) {
      throw ContractError(std::string(e.what()) + " (episode " + std::to_string(episode) + ")");
    }
  }
  sum.completion_episode = tracker.completion();
  sum.env_steps = steps;
  sum.mean_return = sum.episodes_run > 0 ? return_acc / sum.episodes_run : 0.0;
  if (ecfg.kind == env::EnvKind::coop_nav && cfg.final_eval_episodes > 0)
    sum.occupation_rate = evaluate_occupation_rate(learners, ecfg, cfg.final_eval_episodes, eval_rng);
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation over seeds

struct CompletionStats {
  std::vector<std::optional<int>> per_seed;  // nullopt = did not finish
  int completed = 0;
  int dnf = 0;
  double mean = 0.0;  // over completed seeds
  double std = 0.0;   // population std over completed seeds
  int budget = 0;

  // ">budget" when no seed finished, otherwise "mean ± std".
  std::string display() const {
    if (completed == 0) return ">" + std::to_string(budget);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f ± %.1f", mean, std);
    return buf;
  }
};

inline CompletionStats episodes_to_completion(const std::vector<RunMetrics>& runs) {
  require(!runs.empty(), "episodes_to_completion: need at least one run");
  CompletionStats s;
  double acc = 0.0, sq = 0.0;
  for (const auto& r : runs) {
    s.per_seed.push_back(r.summary.completion_episode);
    s.budget = std::max(s.budget, r.summary.budget);
    if (r.summary.completion_episode) {
      ++s.completed;
      const double v = *r.summary.completion_episode;
      acc += v;
      sq += v * v;
    } else {
      ++s.dnf;
    }
  }
  if (s.completed > 0) {
    s.mean = acc / s.completed;
    s.std = std::sqrt(std::max(0.0, sq / s.completed - s.mean * s.mean));
  }
  return s;
}

// Completion episode, or +infinity for a did-not-finish run.
inline double completion_or_inf(const RunMetrics& r) {
  return r.summary.completion_episode ? static_cast<double>(*r.summary.completion_episode)
                                      : std::numeric_limits<double>::infinity();
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace remax::harness
