// Command-line front end: training runs, evaluations, gradient checks and
// refresh dumps.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "remax/checkpoint.hpp"
#include "remax/config.hpp"
#include "remax/errors.hpp"
#include "remax/gradcheck.hpp"
#include "remax/harness.hpp"
#include "remax/metrics_io.hpp"

namespace {

using namespace remax;
using harness::ExperimentConfig;

struct CommonFlags {
  std::string config_path;
  std::string profile = "default";
  std::string env;
  int agents = 0;
  std::string explorer;
  std::vector<std::uint64_t> seeds;
  int episodes = 0;
  double scale = 1.0;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "INI config file");
  cmd->add_option("--profile", f.profile, "defaults when no config file is given")
      ->check(CLI::IsMember({"default", "desk"}));
  cmd->add_option("--env", f.env, "maze | coop_nav | predator_prey");
  cmd->add_option("--agents", f.agents, "agent count (predator_prey: predators + preys)");
  cmd->add_option("--explorer", f.explorer, "random | remax | gene");
  cmd->add_option("--seed", f.seeds, "seed (repeatable)");
  cmd->add_option("--episodes", f.episodes, "training episode budget");
  cmd->add_option("--scale", f.scale, "multiplies the default episode budget")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "output directory");
}

// Config file first, then flags on top.
ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig c;
  if (!f.config_path.empty()) {
    c = harness::load_config(f.config_path);
  } else {
    const auto kind = env::env_kind_from_string(f.env.empty() ? "maze" : f.env);
    const int agents = f.agents > 0 ? f.agents : (kind == env::EnvKind::maze ? 1 : 2);
    c = f.profile == "desk" ? harness::desk_config(kind, agents) : harness::default_config(kind, agents);
  }
  if (!f.config_path.empty() && (!f.env.empty() || f.agents > 0)) {
    const auto kind = f.env.empty() ? c.env.kind : env::env_kind_from_string(f.env);
    const int agents = f.agents > 0 ? f.agents : c.env.n_agents;
    const auto dyn = c.env.dynamics;
    const int length = c.env.episode_length;
    c.env = env::EnvConfig::make(kind, agents);
    c.env.dynamics = dyn;
    c.env.episode_length = length;
    c.remax.n_agents = c.gene.n_agents = c.env.n_agents;
  }
  if (!f.explorer.empty()) c.explorer = harness::explorer_from_string(f.explorer);
  if (!f.seeds.empty()) c.seeds = f.seeds;
  if (f.episodes > 0) c.max_episodes = f.episodes;
  if (f.scale != 1.0) c.max_episodes = std::max(1, static_cast<int>(std::lround(c.max_episodes * f.scale)));
  if (!f.out.empty()) c.output_dir = f.out;
  c.validate();
  return c;
}

std::string run_stem(const ExperimentConfig& c, std::uint64_t seed) {
  return c.output_dir + "/" + env::to_string(c.env.kind) + "_" + harness::to_string(c.explorer) + "_seed" +
         std::to_string(seed);
}

int cmd_run(const ExperimentConfig& c) {
  std::filesystem::create_directories(c.output_dir);
  {
    std::ofstream os(c.output_dir + "/config.ini");
    if (!os) throw IoError("cannot write " + c.output_dir + "/config.ini");
    os << harness::format_config(c);
  }
  std::vector<harness::RunMetrics> runs;
  for (auto seed : c.seeds) {
    auto r = harness::run_training(c, seed);
    const auto stem = run_stem(c, seed);
    harness::write_metrics(r.metrics, stem + ".csv");
    checkpoint::save(stem + ".ckpt", r.learners, Rng(seed));
    const auto& s = r.metrics.summary;
    std::printf("seed %llu: completion=%s episodes=%d refreshes=%d mean_return=%.4f",
                static_cast<unsigned long long>(seed),
                s.completion_episode ? std::to_string(*s.completion_episode).c_str() : "DNF", s.episodes_run,
                s.refreshes, s.mean_return);
    if (s.occupation_rate) std::printf(" occupation=%.4f", *s.occupation_rate);
    std::printf("\n");
    runs.push_back(std::move(r.metrics));
  }
  const auto stats = harness::episodes_to_completion(runs);
  std::printf("episodes-to-completion: %s (completed %d, DNF %d)\n", stats.display().c_str(), stats.completed,
              stats.dnf);
  return 0;
}

maddpg::LearnerSet load_learners(const ExperimentConfig& c, const std::string& path) {
  Rng rng(0);
  auto ls = maddpg::make_learners(c.env.n_agents, c.env.state_dim(), c.maddpg, rng);
  checkpoint::load(path, ls);
  return ls;
}

int cmd_gradcheck(int nets, std::uint64_t seed) {
  Rng rng(seed);
  const auto reports = {gradcheck::mlp_suite(nets, rng), gradcheck::composite_suite(rng)};
  bool ok = true;
  for (const auto& r : reports) {
    std::printf("%-10s cases=%-3d max_rel_error=%.3e tolerance=%.0e %s\n", r.name.c_str(), r.cases,
                r.max_rel_error, r.tolerance, r.pass() ? "ok" : "FAILED");
    ok = ok && r.pass();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exploration benchmark for multi-agent particle tasks"};
  app.require_subcommand(1);

  CommonFlags run_flags, occ_flags, ret_flags, dump_flags;
  auto* run = app.add_subcommand("run", "train one config over its seeds");
  add_common(run, run_flags);

  std::string checkpoint_path, prey_path;
  int eval_episodes = 200;
  std::uint64_t eval_seed = 0;
  auto* occ = app.add_subcommand("eval-occupation", "occupation rate of a trained coop_nav checkpoint");
  add_common(occ, occ_flags);
  occ->add_option("--checkpoint", checkpoint_path, "learner checkpoint")->required();
  occ->add_option("--eval-episodes", eval_episodes, "evaluation episodes");
  occ->add_option("--eval-seed", eval_seed, "evaluation seed");

  auto* ret = app.add_subcommand("eval-returns", "predator returns against a frozen prey checkpoint");
  add_common(ret, ret_flags);
  ret->add_option("--checkpoint", checkpoint_path, "predator checkpoint")->required();
  ret->add_option("--prey-checkpoint", prey_path, "frozen prey checkpoint")->required();
  ret->add_option("--eval-episodes", eval_episodes, "evaluation episodes");
  ret->add_option("--eval-seed", eval_seed, "evaluation seed");

  int nets = 20;
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--nets", nets, "random networks to check");
  gc->add_option("--seed", gc_seed, "seed");

  auto* dump = app.add_subcommand("dump-surrogate", "train with remax and write a CSV per refresh");
  add_common(dump, dump_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(resolve(run_flags));
    if (occ->parsed()) {
      const auto c = resolve(occ_flags);
      const auto ls = load_learners(c, checkpoint_path);
      Rng rng(eval_seed);
      std::printf("occupation_rate %.6f\n", harness::evaluate_occupation_rate(ls, c.env, eval_episodes, rng));
      return 0;
    }
    if (ret->parsed()) {
      const auto c = resolve(ret_flags);
      const auto predators = load_learners(c, checkpoint_path);
      const auto prey = load_learners(c, prey_path);
      Rng rng(eval_seed);
      std::printf("mean_predator_return %.6f\n",
                  harness::evaluate_returns(predators, prey, c.env, eval_episodes, rng));
      return 0;
    }
    if (gc->parsed()) return cmd_gradcheck(nets, gc_seed);
    if (dump->parsed()) {
      auto c = resolve(dump_flags);
      c.explorer = harness::ExplorerKind::remax;
      c.dump_refreshes = true;
      return cmd_run(c);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error[config]: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error[io]: %s\n", e.what());
    return 3;
  } catch (const DivergedError& e) {
    std::fprintf(stderr, "error[diverged]: %s\n", e.what());
    return 4;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error[contract]: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 1;
  }
  return 0;
}
