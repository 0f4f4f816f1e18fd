#pragma once

// Relational exploration: a GAT-encoder VGAE trained jointly with a surrogate
// that regresses exploration scores from the latent, followed by noisy
// gradient ascent on the surrogate and decoding of the optimized latents into
// new initial states.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "remax/envs.hpp"
#include "remax/errors.hpp"
#include "remax/gat.hpp"
#include "remax/maddpg.hpp"
#include "remax/nn.hpp"
#include "remax/rng.hpp"

namespace remax::relational {

struct RemaxConfig {
  int n_agents = 1;
  int heads = 1;
  int hidden_features = 16;
  int latent_dim = 1;
  double leaky_slope = 0.2;
  std::vector<int> decoder_hidden{32, 32};
  std::vector<int> surrogate_hidden{64, 64};
  double lambda = 1e-3;
  double gamma = 0.95;
  double beta = 1.0;
  double kl_weight = 1.0;  // multiplies the KL term of the VGAE bound
  double lr = 1e-4;
  int epochs = 3;
  std::size_t batch_size = 1024;
  int pool_size = 400;  // N_s: generated states per refresh and refresh period in episodes
  int ascent_loops = 400;
  double ascent_step = 0.1;
  bool ascent_noise = true;
  double latent_bound = std::numeric_limits<double>::infinity();  // box on |z_k| during ascent
  double p_generated = 0.8;
  std::size_t max_scored = 20000;
  bool standardize_scores = true;

  int state_dim() const { return env::kFeatures * n_agents; }

  GatShape gat_shape() const {
    return {n_agents, env::kFeatures, hidden_features, heads, latent_dim, leaky_slope};
  }
};

struct RemaxModel {
  RemaxConfig config;
  GatEncoderParams encoder;
  nn::MlpParams decoder;
  nn::MlpParams surrogate;
  nn::AdamState encoder_opt;
  nn::AdamState decoder_opt;
  nn::AdamState surrogate_opt;
};

inline nn::MlpSpec decoder_spec(const RemaxConfig& c) {
  std::vector<int> sizes{c.latent_dim};
  sizes.insert(sizes.end(), c.decoder_hidden.begin(), c.decoder_hidden.end());
  sizes.push_back(c.state_dim());
  return {sizes, nn::HiddenActivation::relu(), nn::OutputKind::identity};
}

inline nn::MlpSpec surrogate_spec(const RemaxConfig& c) {
  std::vector<int> sizes{c.latent_dim};
  sizes.insert(sizes.end(), c.surrogate_hidden.begin(), c.surrogate_hidden.end());
  sizes.push_back(1);
  return {sizes, nn::HiddenActivation::relu(), nn::OutputKind::identity};
}

// Fresh Xavier parameters and zeroed optimizer moments.
inline RemaxModel make_model(const RemaxConfig& cfg, Rng& rng) {
  RemaxModel m;
  m.config = cfg;
  m.encoder = GatEncoderParams::xavier(cfg.gat_shape(), rng);
  m.decoder = nn::xavier_init(decoder_spec(cfg), rng);
  m.surrogate = nn::xavier_init(surrogate_spec(cfg), rng);
  m.encoder_opt = nn::AdamState::for_params(m.encoder);
  m.decoder_opt = nn::AdamState::for_params(m.decoder);
  m.surrogate_opt = nn::AdamState::for_params(m.surrogate);
  return m;
}

// ---------------------------------------------------------------------------
// Encoding

struct Encoding {
  Vector z;
  Vector mean;
  Vector stddev;
};

// Reparameterized sample z = mean + stddev * eps with caller-supplied eps.
inline Encoding encode_with_noise(const GatEncoderParams& enc, const Vector& state, const Vector& eps) {
  auto f = gat_forward(enc, state);
  Encoding e;
  e.mean = f.mean;
  e.stddev = f.log_std.array().exp();
  e.z = e.mean + e.stddev.cwiseProduct(eps);
  return e;
}

inline Encoding encode(const RemaxModel& m, const Vector& state, Rng& rng) {
  Vector eps(m.config.latent_dim);
  for (auto& x : eps) x = rng.normal();
  return encode_with_noise(m.encoder, state, eps);
}

// KL(N(mean, stddev^2 I) || N(0, I)).
inline double kl_standard_normal(const Vector& mean, const Vector& stddev) {
  return 0.5 * (mean.array().square() + stddev.array().square() - 1.0 - 2.0 * stddev.array().log()).sum();
}

// ---------------------------------------------------------------------------
// Exploration score

// Per-transition scores: mean over agents of Q_j(s,a) + lambda |Q_j(s,a) - (r_j + gamma Q'_j(s', mu'(s')))|.
inline Vector exploration_scores(const maddpg::LearnerSet& ls, const maddpg::Minibatch& b, double lambda,
                                 double gamma) {
  const Matrix next_actions = maddpg::target_actions(ls, b.next_obs);
  const Matrix in = maddpg::stack(b.obs, b.actions);
  const Matrix next_in = maddpg::stack(b.next_obs, next_actions);
  Vector score = Vector::Zero(b.size());
  for (int j = 0; j < ls.n_agents; ++j) {
    const auto& ag = ls.agents[static_cast<std::size_t>(j)];
    const Matrix q = nn::evaluate(ag.critic, in);
    const Matrix q_next = nn::evaluate(ag.target_critic, next_in);
    const Eigen::RowVectorXd y = b.rewards.row(j) + gamma * q_next;
    score += (q.array() + lambda * (q - y).array().abs()).matrix().transpose();
  }
  return score / static_cast<double>(ls.n_agents);
}

inline double exploration_score(const maddpg::Transition& t, const maddpg::LearnerSet& ls, double lambda,
                                double gamma) {
  require(t.obs.size() == ls.obs_dim && t.action.size() == ls.action_dim() && t.rewards.size() == ls.n_agents,
          "exploration_score: transition does not match the learners");
  maddpg::Minibatch b{t.obs, t.action, t.rewards.transpose(), t.next_obs};
  return exploration_scores(ls, b, lambda, gamma)[0];
}

struct ScoredState {
  Vector state;
  double score = 0.0;
};

// Scores the states at which transitions start. A state seen several times
// keeps the score of its latest occurrence; the result is subsampled without
// replacement to `max_scored` and optionally standardized.
inline std::vector<ScoredState> score_states(const std::vector<maddpg::Transition>& window,
                                             const maddpg::LearnerSet& ls, const RemaxConfig& cfg, Rng& rng) {
  std::map<std::vector<double>, std::size_t> latest;
  for (std::size_t k = 0; k < window.size(); ++k) {
    const auto& o = window[k].obs;
    latest[std::vector<double>(o.data(), o.data() + o.size())] = k;
  }
  std::vector<std::size_t> keep;
  keep.reserve(latest.size());
  for (const auto& kv : latest) keep.push_back(kv.second);
  std::sort(keep.begin(), keep.end());
  if (keep.size() > cfg.max_scored) {
    // partial Fisher-Yates
    for (std::size_t i = 0; i < cfg.max_scored; ++i) std::swap(keep[i], keep[i + rng.index(keep.size() - i)]);
    keep.resize(cfg.max_scored);
    std::sort(keep.begin(), keep.end());
  }
  std::vector<ScoredState> out;
  out.reserve(keep.size());
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < keep.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, keep.size() - start);
    maddpg::Minibatch b{Matrix(ls.obs_dim, n), Matrix(ls.action_dim(), n), Matrix(ls.n_agents, n),
                        Matrix(ls.obs_dim, n)};
    for (std::size_t c = 0; c < n; ++c) {
      const auto& t = window[keep[start + c]];
      const auto col = static_cast<Eigen::Index>(c);
      b.obs.col(col) = t.obs;
      b.actions.col(col) = t.action;
      b.rewards.col(col) = t.rewards;
      b.next_obs.col(col) = t.next_obs;
    }
    const Vector s = exploration_scores(ls, b, cfg.lambda, cfg.gamma);
    for (std::size_t c = 0; c < n; ++c) out.push_back({window[keep[start + c]].obs, s[static_cast<Eigen::Index>(c)]});
  }
  if (cfg.standardize_scores && !out.empty()) {
    double mean = 0.0;
    for (const auto& s : out) mean += s.score;
    mean /= static_cast<double>(out.size());
    double var = 0.0;
    for (const auto& s : out) var += (s.score - mean) * (s.score - mean);
    var /= static_cast<double>(out.size());
    const double sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    for (auto& s : out) s.score = (s.score - mean) / sd;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Joint VGAE + surrogate objective

struct CompositeLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double surrogate = 0.0;
  GatEncoderParams d_encoder;
  nn::MlpParams d_decoder;
  nn::MlpParams d_surrogate;
};

// Batch-mean of  ||s - g(z)||^2 / D + w KL(q(z|s) || N(0,I)) + beta (f(z) - y)^2
// with z = mean + stddev * eps, eps given column-wise (latent x B). Gradients
// reach the encoder through z from all three terms.
inline CompositeLoss composite_loss(const RemaxModel& m, const std::vector<const ScoredState*>& batch,
                                    const Matrix& eps, double beta, double kl_weight = 1.0) {
  const auto& cfg = m.config;
  const auto n = static_cast<Eigen::Index>(batch.size());
  require(n >= 1 && eps.rows() == cfg.latent_dim && eps.cols() == n, "composite_loss: bad batch shape");
  const double inv_n = 1.0 / static_cast<double>(n);
  const double dim = static_cast<double>(cfg.state_dim());

  std::vector<GatForward> fwd;
  fwd.reserve(batch.size());
  Matrix z(cfg.latent_dim, n), mean(cfg.latent_dim, n), sd(cfg.latent_dim, n), states(cfg.state_dim(), n);
  Eigen::RowVectorXd targets(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& s = *batch[static_cast<std::size_t>(c)];
    fwd.push_back(gat_forward(m.encoder, s.state));
    const auto& f = fwd.back();
    mean.col(c) = f.mean;
    sd.col(c) = f.log_std.array().exp();
    z.col(c) = f.mean + sd.col(c).cwiseProduct(eps.col(c));
    states.col(c) = s.state;
    targets[c] = s.score;
  }

  auto dec = nn::forward(m.decoder, z);
  auto sur = nn::forward(m.surrogate, z);
  const Matrix recon_err = dec.output - states;
  const Eigen::RowVectorXd sur_err = sur.output.row(0) - targets;

  CompositeLoss out;
  out.reconstruction = recon_err.squaredNorm() / dim * inv_n;
  out.kl = 0.5 * (mean.array().square() + sd.array().square() - 1.0 - 2.0 * sd.array().log()).sum() * inv_n;
  out.surrogate = sur_err.squaredNorm() * inv_n;
  out.total = out.reconstruction + kl_weight * out.kl + beta * out.surrogate;

  const Matrix d_recon = (2.0 / dim * inv_n) * recon_err;
  const Matrix d_sur = (2.0 * beta * inv_n) * sur_err;
  auto dec_g = nn::backward(m.decoder, dec.tape, d_recon);
  auto sur_g = nn::backward(m.surrogate, sur.tape, d_sur);
  out.d_decoder = std::move(dec_g.params);
  out.d_surrogate = std::move(sur_g.params);
  const Matrix d_z = dec_g.input + sur_g.input;

  out.d_encoder = GatEncoderParams::zeros(m.encoder.shape);
  for (Eigen::Index c = 0; c < n; ++c) {
    // KL: d/dmean = mean, d/dlog_std = sd^2 - 1
    const Vector d_mean = kl_weight * inv_n * mean.col(c) + d_z.col(c);
    const Vector d_log_std = kl_weight * inv_n * (sd.col(c).array().square() - 1.0).matrix() +
                             d_z.col(c).cwiseProduct(eps.col(c)).cwiseProduct(sd.col(c));
    gat_backward(m.encoder, fwd[static_cast<std::size_t>(c)], d_mean, d_log_std, out.d_encoder);
  }
  return out;
}

struct TrainOptions {
  int epochs = 3;
  std::size_t batch_size = 1024;
  double lr = 1e-4;
  double beta = 1.0;
  double kl_weight = 1.0;

  static TrainOptions from(const RemaxConfig& c) { return {c.epochs, c.batch_size, c.lr, c.beta, c.kl_weight}; }
};

struct LossTrace {
  std::vector<double> total;
  std::vector<double> reconstruction;
  std::vector<double> kl;
  std::vector<double> surrogate;
};

// Minimizes the composite loss with Adam; returns per-epoch sample-weighted
// mean losses.
inline LossTrace train(RemaxModel& m, const std::vector<ScoredState>& data, const TrainOptions& opt, Rng& rng) {
  require(!data.empty(), "train: need at least one scored state");
  for (const auto& s : data)
    require(s.state.size() == m.config.state_dim() && std::isfinite(s.score), "train: bad scored state");
  LossTrace trace;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double tot = 0.0, rec = 0.0, kl = 0.0, sur = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t n = std::min(opt.batch_size, order.size() - start);
      std::vector<const ScoredState*> batch;
      batch.reserve(n);
      for (std::size_t k = 0; k < n; ++k) batch.push_back(&data[order[start + k]]);
      Matrix eps(m.config.latent_dim, static_cast<Eigen::Index>(n));
      for (Eigen::Index c = 0; c < eps.cols(); ++c)
        for (Eigen::Index r = 0; r < eps.rows(); ++r) eps(r, c) = rng.normal();
      auto l = composite_loss(m, batch, eps, opt.beta, opt.kl_weight);
      if (!std::isfinite(l.total)) throw DivergedError("remax train: non-finite loss in epoch " + std::to_string(epoch));
      nn::adam_step(m.encoder, l.d_encoder, m.encoder_opt, opt.lr);
      nn::adam_step(m.decoder, l.d_decoder, m.decoder_opt, opt.lr);
      nn::adam_step(m.surrogate, l.d_surrogate, m.surrogate_opt, opt.lr);
      const double w = static_cast<double>(n);
      tot += w * l.total;
      rec += w * l.reconstruction;
      kl += w * l.kl;
      sur += w * l.surrogate;
    }
    const double d = static_cast<double>(data.size());
    trace.total.push_back(tot / d);
    trace.reconstruction.push_back(rec / d);
    trace.kl.push_back(kl / d);
    trace.surrogate.push_back(sur / d);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Latent ascent

struct AscentOptions {
  int samples = 400;
  int loops = 400;
  double step = 0.1;
  bool noise = true;
  int max_restarts = 8;
  double bound = std::numeric_limits<double>::infinity();

  static AscentOptions from(const RemaxConfig& c) {
    return {c.pool_size, c.ascent_loops, c.ascent_step, c.ascent_noise, 8, c.latent_bound};
  }
};

struct LatentAscent {
  Matrix initial;    // latent x samples (z^0)
  Matrix optimized;  // latent x samples (z*)
  int restarts = 0;
};

// Surrogate gradient w.r.t. each column of `z`.
inline Matrix surrogate_gradient(const nn::MlpParams& surrogate, const Matrix& z) {
  auto f = nn::forward(surrogate, z);
  return nn::backward(surrogate, f.tape, Matrix(Matrix::Ones(1, z.cols())), nn::GradTarget::input_only).input;
}

// z_{t+1} = z_t + step (grad f(z_t) + eta_t), eta_t ~ N(0, I/t), t = 1..loops,
// from z_0 ~ N(0, I), optionally projected onto the box |z_k| <= bound.
// Non-finite samples are redrawn and rerun.
inline LatentAscent optimize_latents(const nn::MlpParams& surrogate, int latent_dim, const AscentOptions& opt,
                                     Rng& rng) {
  require(opt.samples >= 0 && opt.loops >= 0 && latent_dim >= 1, "optimize_latents: bad options");
  auto draw = [&](Eigen::Index cols) {
    Matrix z(latent_dim, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < latent_dim; ++r) z(r, c) = rng.normal();
    return z;
  };
  auto run = [&](Matrix z) {
    for (int t = 1; t <= opt.loops; ++t) {
      Matrix step = surrogate_gradient(surrogate, z);
      if (opt.noise) {
        const double sd = std::sqrt(1.0 / t);
        for (Eigen::Index c = 0; c < step.cols(); ++c)
          for (Eigen::Index r = 0; r < step.rows(); ++r) step(r, c) += rng.normal(0.0, sd);
      }
      z += opt.step * step;
      if (std::isfinite(opt.bound)) z = z.cwiseMax(-opt.bound).cwiseMin(opt.bound);
    }
    return z;
  };

  LatentAscent out;
  out.initial = draw(opt.samples);
  out.optimized = run(out.initial);
  for (Eigen::Index c = 0; c < out.optimized.cols(); ++c) {
    int attempts = 0;
    while (!out.optimized.col(c).allFinite()) {
      if (++attempts > opt.max_restarts) throw DivergedError("optimize_latents: latent keeps diverging");
      ++out.restarts;
      out.initial.col(c) = draw(1);
      out.optimized.col(c) = run(out.initial.col(c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation pool

enum class InitSource { default_start, generated };

inline std::string to_string(InitSource s) { return s == InitSource::generated ? "generated" : "default"; }

struct GenerationPool {
  std::vector<Vector> states;
  std::size_t cursor = 0;
  double p_generated = 0.8;

  bool exhausted() const { return cursor >= states.size(); }
};

// Decodes each optimized latent into a state.
inline GenerationPool generate_states(const nn::MlpParams& decoder, const Matrix& latents, double p_generated) {
  GenerationPool pool;
  pool.p_generated = p_generated;
  if (latents.cols() == 0) return pool;
  const Matrix s = nn::evaluate(decoder, latents);
  pool.states.reserve(static_cast<std::size_t>(s.cols()));
  for (Eigen::Index c = 0; c < s.cols(); ++c) pool.states.emplace_back(s.col(c));
  return pool;
}

struct InitialState {
  env::WorldState state;
  InitSource source = InitSource::default_start;
};

// With probability p_generated (and a non-exhausted pool) take the next pooled
// state; otherwise the environment default.
inline InitialState pick_initial_state(GenerationPool& pool, const env::EnvConfig& cfg, Rng& rng) {
  if (!pool.exhausted() && rng.bernoulli(pool.p_generated)) {
    const Vector& s = pool.states[pool.cursor++];
    require(s.size() == cfg.state_dim(), "pick_initial_state: pooled state has wrong dimension");
    return {env::WorldState::unflatten(s), InitSource::generated};
  }
  return {env::default_initial_state(cfg, rng), InitSource::default_start};
}

// ---------------------------------------------------------------------------
// Refresh

struct RefreshResult {
  GenerationPool pool;
  LossTrace trace;
  LatentAscent ascent;
  Vector surrogate_initial;    // f(z^0)
  Vector surrogate_optimized;  // f(z*)
};

// Re-initializes every parameter, trains on `scored`, ascends the surrogate,
// and decodes a fresh pool.
inline RefreshResult reinit_and_refresh(RemaxModel& m, const std::vector<ScoredState>& scored, Rng& rng) {
  require(!scored.empty(), "reinit_and_refresh: no scored states since the last refresh");
  m = make_model(m.config, rng);
  RefreshResult r;
  r.trace = train(m, scored, TrainOptions::from(m.config), rng);
  r.ascent = optimize_latents(m.surrogate, m.config.latent_dim, AscentOptions::from(m.config), rng);
  r.pool = generate_states(m.decoder, r.ascent.optimized, m.config.p_generated);
  r.surrogate_initial = nn::evaluate(m.surrogate, r.ascent.initial).row(0).transpose();
  r.surrogate_optimized = nn::evaluate(m.surrogate, r.ascent.optimized).row(0).transpose();
  return r;
}

// CSV dump of one refresh: latents before/after ascent, surrogate values and
// decoded states.
inline void write_refresh_dump(const std::string& path, const RefreshResult& r) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write refresh dump: " + path);
  const auto latent = r.ascent.initial.rows();
  os << "sample";
  for (Eigen::Index d = 0; d < latent; ++d) os << ",z0_" << d;
  for (Eigen::Index d = 0; d < latent; ++d) os << ",zstar_" << d;
  os << ",f_z0,f_zstar";
  const auto dim = r.pool.states.empty() ? 0 : r.pool.states.front().size();
  for (Eigen::Index d = 0; d < dim; ++d) os << ",s_" << d;
  os << '\n';
  os.precision(17);
  for (Eigen::Index c = 0; c < r.ascent.initial.cols(); ++c) {
    os << c;
    for (Eigen::Index d = 0; d < latent; ++d) os << ',' << r.ascent.initial(d, c);
    for (Eigen::Index d = 0; d < latent; ++d) os << ',' << r.ascent.optimized(d, c);
    os << ',' << r.surrogate_initial[c] << ',' << r.surrogate_optimized[c];
    for (Eigen::Index d = 0; d < dim; ++d) os << ',' << r.pool.states[static_cast<std::size_t>(c)][d];
    os << '\n';
  }
}

}  // namespace remax::relational
