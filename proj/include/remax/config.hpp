#pragma once

// Experiment configuration and its INI-style text format
// (see docs/config.md for the key reference).

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "remax/envs.hpp"
#include "remax/errors.hpp"
#include "remax/gene.hpp"
#include "remax/maddpg.hpp"
#include "remax/remax.hpp"

namespace remax::harness {

enum class ExplorerKind { random, remax, gene };

inline std::string to_string(ExplorerKind k) {
  switch (k) {
    case ExplorerKind::random: return "random";
    case ExplorerKind::remax: return "remax";
    case ExplorerKind::gene: return "gene";
  }
  return "?";
}

inline ExplorerKind explorer_from_string(const std::string& s) {
  if (s == "random") return ExplorerKind::random;
  if (s == "remax") return ExplorerKind::remax;
  if (s == "gene") return ExplorerKind::gene;
  throw ConfigError("unknown explorer '" + s + "' (expected random, remax or gene)");
}

// Episode budgets before a run is declared did-not-finish.
inline int default_budget(env::EnvKind k) {
  switch (k) {
    case env::EnvKind::maze: return 10000;
    case env::EnvKind::coop_nav: return 20000;
    case env::EnvKind::predator_prey: return 50000;
  }
  return 10000;
}

struct ExperimentConfig {
  env::EnvConfig env = env::EnvConfig::maze();
  ExplorerKind explorer = ExplorerKind::random;
  std::vector<std::uint64_t> seeds{0};
  int max_episodes = 10000;
  int refresh_period = 400;  // N_s episodes between explorer refreshes
  int eval_every = 10;       // training episodes between default-start evaluations
  int completion_streak = 10;
  bool stop_at_completion = true;
  int final_eval_episodes = 200;
  maddpg::MaddpgConfig maddpg;
  relational::RemaxConfig remax;
  gene::GeneConfig gene;
  std::string output_dir = "out";
  bool record_wall_clock = true;
  bool dump_refreshes = false;

  void validate() const {
    env.validate();
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (max_episodes < 1) throw ConfigError("max_episodes must be positive");
    if (refresh_period < 1) throw ConfigError("refresh_period must be positive");
    if (explorer != ExplorerKind::random && max_episodes < refresh_period)
      throw ConfigError("max_episodes (" + std::to_string(max_episodes) + ") must be >= refresh period N_s (" +
                        std::to_string(refresh_period) + ") for a generative explorer");
    if (eval_every < 1 || completion_streak < 1) throw ConfigError("eval_every and completion_streak must be positive");
    if (maddpg.update_every < 1 || maddpg.batch_size < 1) throw ConfigError("bad MADDPG update cadence");
    if (remax.n_agents != env.n_agents || gene.n_agents != env.n_agents)
      throw ConfigError("explorer agent count does not match the environment");
    if (remax.p_generated < 0.0 || remax.p_generated > 1.0 || gene.p_generated < 0.0 || gene.p_generated > 1.0)
      throw ConfigError("p_generated must lie in [0,1]");
  }
};

// Defaults for an environment, with the attention head count per task.
inline ExperimentConfig default_config(env::EnvKind kind, int agents) {
  ExperimentConfig c;
  c.env = env::EnvConfig::make(kind, agents);
  c.max_episodes = default_budget(kind);
  c.remax.n_agents = c.env.n_agents;
  c.remax.heads = kind == env::EnvKind::predator_prey ? 2 : 1;
  c.gene.n_agents = c.env.n_agents;
  return c;
}

// Reduced-cost profile for single-machine runs: sparser updates, shorter
// budgets and a faster generator schedule. See docs/config.md.
inline ExperimentConfig desk_config(env::EnvKind kind, int agents) {
  auto c = default_config(kind, agents);
  c.record_wall_clock = false;
  c.env.dynamics.max_force = 2.0;
  c.maddpg.update_every = 25;
  c.remax.lr = c.gene.lr = 1e-3;
  c.remax.epochs = c.gene.epochs = 20;
  c.remax.batch_size = c.gene.batch_size = 256;
  switch (kind) {
    case env::EnvKind::maze: c.max_episodes = 3000; break;
    case env::EnvKind::coop_nav: c.max_episodes = 4000; break;
    case env::EnvKind::predator_prey: c.max_episodes = 5000; break;
  }
  return c;
}

namespace detail {

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(std::stoull(item));
  }
  return out;
}

inline std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string format_bound(double b) {
  if (!std::isfinite(b)) return "inf";
  std::ostringstream os;
  os.precision(17);
  os << b;
  return os.str();
}

}  // namespace detail

// Reads an INI text. Unknown keys are rejected; missing keys keep defaults.
inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  const auto env_kind = env::env_kind_from_string(tree.get<std::string>("env.kind", "maze"));
  const int agents = tree.get<int>("env.agents", env_kind == env::EnvKind::maze ? 1 : 2);
  ExperimentConfig c = default_config(env_kind, agents);

  auto& e = c.env;
  auto& m = c.maddpg;
  auto& r = c.remax;
  auto& g = c.gene;
  try {
    for (const auto& [section, body] : tree) {
      for (const auto& [key, node] : body) {
        const std::string k = section + "." + key;
        const std::string v = node.get_value<std::string>();
        if (k == "env.kind" || k == "env.agents") continue;
        if (k == "env.episode_length") e.episode_length = std::stoi(v);
        else if (k == "env.max_force") e.dynamics.max_force = std::stod(v);
        else if (k == "env.damping") e.dynamics.damping = std::stod(v);
        else if (k == "env.dt") e.dynamics.dt = std::stod(v);
        else if (k == "env.prey_force_multiplier") e.dynamics.prey_force_multiplier = std::stod(v);
        else if (k == "env.occupy_radius") e.occupy_radius = std::stod(v);
        else if (k == "env.capture_radius") e.capture_radius = std::stod(v);
        else if (k == "env.capture_threshold") e.capture_threshold = std::stoi(v);
        else if (k == "env.boundary_penalty") e.boundary_penalty = std::stod(v);
        else if (k == "experiment.explorer") c.explorer = explorer_from_string(v);
        else if (k == "experiment.seeds") c.seeds = detail::parse_seed_list(v);
        else if (k == "experiment.max_episodes") c.max_episodes = std::stoi(v);
        else if (k == "experiment.refresh_period") c.refresh_period = std::stoi(v);
        else if (k == "experiment.eval_every") c.eval_every = std::stoi(v);
        else if (k == "experiment.completion_streak") c.completion_streak = std::stoi(v);
        else if (k == "experiment.stop_at_completion") c.stop_at_completion = v == "true" || v == "1";
        else if (k == "experiment.final_eval_episodes") c.final_eval_episodes = std::stoi(v);
        else if (k == "experiment.output_dir") c.output_dir = v;
        else if (k == "experiment.record_wall_clock") c.record_wall_clock = v == "true" || v == "1";
        else if (k == "experiment.dump_refreshes") c.dump_refreshes = v == "true" || v == "1";
        else if (k == "maddpg.hidden") m.hidden = detail::parse_int_list(v);
        else if (k == "maddpg.actor_lr") m.actor_lr = std::stod(v);
        else if (k == "maddpg.critic_lr") m.critic_lr = std::stod(v);
        else if (k == "maddpg.tau") m.tau = std::stod(v);
        else if (k == "maddpg.gamma") m.gamma = std::stod(v);
        else if (k == "maddpg.buffer_capacity") m.buffer_capacity = std::stoull(v);
        else if (k == "maddpg.batch_size") m.batch_size = std::stoull(v);
        else if (k == "maddpg.update_every") m.update_every = std::stoi(v);
        else if (k == "maddpg.noise_start") m.noise_start = std::stod(v);
        else if (k == "maddpg.noise_end") m.noise_end = std::stod(v);
        else if (k == "maddpg.noise_anneal_fraction") m.noise_anneal_fraction = std::stod(v);
        else if (k == "maddpg.logit_penalty") m.logit_penalty = std::stod(v);
        else if (k == "remax.heads") r.heads = std::stoi(v);
        else if (k == "remax.hidden_features") r.hidden_features = std::stoi(v);
        else if (k == "remax.latent_dim") r.latent_dim = std::stoi(v);
        else if (k == "remax.leaky_slope") r.leaky_slope = std::stod(v);
        else if (k == "remax.decoder_hidden") r.decoder_hidden = detail::parse_int_list(v);
        else if (k == "remax.surrogate_hidden") r.surrogate_hidden = detail::parse_int_list(v);
        else if (k == "remax.lambda") r.lambda = std::stod(v);
        else if (k == "remax.beta") r.beta = std::stod(v);
        else if (k == "remax.kl_weight") r.kl_weight = std::stod(v);
        else if (k == "remax.lr") r.lr = std::stod(v);
        else if (k == "remax.epochs") r.epochs = std::stoi(v);
        else if (k == "remax.batch_size") r.batch_size = std::stoull(v);
        else if (k == "remax.pool_size") r.pool_size = std::stoi(v);
        else if (k == "remax.ascent_loops") r.ascent_loops = std::stoi(v);
        else if (k == "remax.ascent_step") r.ascent_step = std::stod(v);
        else if (k == "remax.ascent_noise") r.ascent_noise = v == "true" || v == "1";
        else if (k == "remax.latent_bound") r.latent_bound = v == "inf" ? std::numeric_limits<double>::infinity() : std::stod(v);
        else if (k == "remax.p_generated") r.p_generated = std::stod(v);
        else if (k == "remax.max_scored") r.max_scored = std::stoull(v);
        else if (k == "remax.standardize_scores") r.standardize_scores = v == "true" || v == "1";
        else if (k == "gene.latent_dim") g.latent_dim = std::stoi(v);
        else if (k == "gene.encoder_hidden") g.encoder_hidden = detail::parse_int_list(v);
        else if (k == "gene.decoder_hidden") g.decoder_hidden = detail::parse_int_list(v);
        else if (k == "gene.lr") g.lr = std::stod(v);
        else if (k == "gene.epochs") g.epochs = std::stoi(v);
        else if (k == "gene.batch_size") g.batch_size = std::stoull(v);
        else if (k == "gene.kl_weight") g.kl_weight = std::stod(v);
        else if (k == "gene.bandwidth") g.bandwidth = std::stod(v);
        else if (k == "gene.pool_size") g.pool_size = std::stoi(v);
        else if (k == "gene.p_generated") g.p_generated = std::stod(v);
        else if (k == "gene.max_states") g.max_states = std::stoull(v);
        else throw ConfigError("unknown config key '" + k + "'");
      }
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError("config value is not a number");
  } catch (const std::out_of_range&) {
    throw ConfigError("config value out of range");
  }
  r.gamma = m.gamma;
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  return parse_config(is);
}

// Full config as INI text; parse_config(format_config(c)) reproduces c.
inline std::string format_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& e = c.env;
  os << "[env]\n"
     << "kind = " << env::to_string(e.kind) << "\n"
     << "agents = " << e.n_agents << "\n"
     << "episode_length = " << e.episode_length << "\n"
     << "max_force = " << e.dynamics.max_force << "\n"
     << "damping = " << e.dynamics.damping << "\n"
     << "dt = " << e.dynamics.dt << "\n"
     << "prey_force_multiplier = " << e.dynamics.prey_force_multiplier << "\n"
     << "occupy_radius = " << e.occupy_radius << "\n"
     << "capture_radius = " << e.capture_radius << "\n"
     << "capture_threshold = " << e.capture_threshold << "\n"
     << "boundary_penalty = " << e.boundary_penalty << "\n\n";
  std::string seeds;
  for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
  os << "[experiment]\n"
     << "explorer = " << to_string(c.explorer) << "\n"
     << "seeds = " << seeds << "\n"
     << "max_episodes = " << c.max_episodes << "\n"
     << "refresh_period = " << c.refresh_period << "\n"
     << "eval_every = " << c.eval_every << "\n"
     << "completion_streak = " << c.completion_streak << "\n"
     << "stop_at_completion = " << (c.stop_at_completion ? "true" : "false") << "\n"
     << "final_eval_episodes = " << c.final_eval_episodes << "\n"
     << "output_dir = " << c.output_dir << "\n"
     << "record_wall_clock = " << (c.record_wall_clock ? "true" : "false") << "\n"
     << "dump_refreshes = " << (c.dump_refreshes ? "true" : "false") << "\n\n";
  const auto& m = c.maddpg;
  os << "[maddpg]\n"
     << "hidden = " << detail::join(m.hidden) << "\n"
     << "actor_lr = " << m.actor_lr << "\n"
     << "critic_lr = " << m.critic_lr << "\n"
     << "tau = " << m.tau << "\n"
     << "gamma = " << m.gamma << "\n"
     << "buffer_capacity = " << m.buffer_capacity << "\n"
     << "batch_size = " << m.batch_size << "\n"
     << "update_every = " << m.update_every << "\n"
     << "noise_start = " << m.noise_start << "\n"
     << "noise_end = " << m.noise_end << "\n"
     << "noise_anneal_fraction = " << m.noise_anneal_fraction << "\n"
     << "logit_penalty = " << m.logit_penalty << "\n\n";
  const auto& r = c.remax;
  os << "[remax]\n"
     << "heads = " << r.heads << "\n"
     << "hidden_features = " << r.hidden_features << "\n"
     << "latent_dim = " << r.latent_dim << "\n"
     << "leaky_slope = " << r.leaky_slope << "\n"
     << "decoder_hidden = " << detail::join(r.decoder_hidden) << "\n"
     << "surrogate_hidden = " << detail::join(r.surrogate_hidden) << "\n"
     << "lambda = " << r.lambda << "\n"
     << "beta = " << r.beta << "\n"
     << "kl_weight = " << r.kl_weight << "\n"
     << "lr = " << r.lr << "\n"
     << "epochs = " << r.epochs << "\n"
     << "batch_size = " << r.batch_size << "\n"
     << "pool_size = " << r.pool_size << "\n"
     << "ascent_loops = " << r.ascent_loops << "\n"
     << "ascent_step = " << r.ascent_step << "\n"
     << "ascent_noise = " << (r.ascent_noise ? "true" : "false") << "\n"
     << "latent_bound = " << detail::format_bound(r.latent_bound) << "\n"
     << "p_generated = " << r.p_generated << "\n"
     << "max_scored = " << r.max_scored << "\n"
     << "standardize_scores = " << (r.standardize_scores ? "true" : "false") << "\n\n";
  const auto& g = c.gene;
  os << "[gene]\n"
     << "latent_dim = " << g.latent_dim << "\n"
     << "encoder_hidden = " << detail::join(g.encoder_hidden) << "\n"
     << "decoder_hidden = " << detail::join(g.decoder_hidden) << "\n"
     << "lr = " << g.lr << "\n"
     << "epochs = " << g.epochs << "\n"
     << "batch_size = " << g.batch_size << "\n"
     << "kl_weight = " << g.kl_weight << "\n"
     << "bandwidth = " << g.bandwidth << "\n"
     << "pool_size = " << g.pool_size << "\n"
     << "p_generated = " << g.p_generated << "\n"
     << "max_states = " << g.max_states << "\n";
  return os.str();
}

}  // namespace remax::harness
