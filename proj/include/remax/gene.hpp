#pragma once

// GENE baseline: an MLP VAE over states plus a Gaussian KDE over the encoded
// latents. New initial states are decoded from KDE draws.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "remax/envs.hpp"
#include "remax/errors.hpp"
#include "remax/nn.hpp"
#include "remax/remax.hpp"
#include "remax/rng.hpp"

namespace remax::gene {

using nn::Matrix;
using nn::Vector;

struct GeneConfig {
  int n_agents = 1;
  int latent_dim = 1;
  std::vector<int> encoder_hidden{32, 32};
  std::vector<int> decoder_hidden{32, 32};
  double lr = 1e-4;
  int epochs = 3;
  std::size_t batch_size = 1024;
  double kl_weight = 1.0;  // multiplies the KL term of the bound
  double bandwidth = 0.05;
  int pool_size = 400;
  double p_generated = 0.8;
  std::size_t max_states = 20000;

  int state_dim() const { return env::kFeatures * n_agents; }
};

struct VaeModel {
  GeneConfig config;
  nn::MlpParams encoder;  // state -> (mean, log_std)
  nn::MlpParams decoder;  // latent -> state
  nn::AdamState encoder_opt;
  nn::AdamState decoder_opt;
};

inline VaeModel make_vae(const GeneConfig& cfg, Rng& rng) {
  require(cfg.latent_dim >= 1, "GeneConfig: latent dimension must be >= 1");
  std::vector<int> enc{cfg.state_dim()};
  enc.insert(enc.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
  enc.push_back(2 * cfg.latent_dim);
  std::vector<int> dec{cfg.latent_dim};
  dec.insert(dec.end(), cfg.decoder_hidden.begin(), cfg.decoder_hidden.end());
  dec.push_back(cfg.state_dim());
  VaeModel m;
  m.config = cfg;
  m.encoder = nn::xavier_init({enc, nn::HiddenActivation::relu(), nn::OutputKind::identity}, rng);
  m.decoder = nn::xavier_init({dec, nn::HiddenActivation::relu(), nn::OutputKind::identity}, rng);
  m.encoder_opt = nn::AdamState::for_params(m.encoder);
  m.decoder_opt = nn::AdamState::for_params(m.decoder);
  return m;
}

// Latent means of each state column.
inline Matrix encode_means(const VaeModel& m, const Matrix& states) {
  return nn::evaluate(m.encoder, states).topRows(m.config.latent_dim);
}

inline Matrix decode(const VaeModel& m, const Matrix& latents) { return nn::evaluate(m.decoder, latents); }

struct VaeLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  nn::MlpParams d_encoder;
  nn::MlpParams d_decoder;
};

// Batch mean of ||s - dec(z)||^2 / D + w KL, z = mean + exp(log_std) * eps.
inline VaeLoss vae_loss(const VaeModel& m, const Matrix& states, const Matrix& eps, double kl_weight = 1.0) {
  const int L = m.config.latent_dim;
  const auto n = states.cols();
  require(n >= 1 && states.rows() == m.config.state_dim() && eps.rows() == L && eps.cols() == n,
          "vae_loss: bad batch shape");
  const double inv_n = 1.0 / static_cast<double>(n);
  const double dim = static_cast<double>(m.config.state_dim());
  auto enc = nn::forward(m.encoder, states);
  const Matrix mean = enc.output.topRows(L);
  const Matrix sd = enc.output.bottomRows(L).array().exp();
  const Matrix z = mean + sd.cwiseProduct(eps);
  auto dec = nn::forward(m.decoder, z);
  const Matrix err = dec.output - states;

  VaeLoss out;
  out.reconstruction = err.squaredNorm() / dim * inv_n;
  out.kl = 0.5 * (mean.array().square() + sd.array().square() - 1.0 - 2.0 * sd.array().log()).sum() * inv_n;
  out.total = out.reconstruction + kl_weight * out.kl;

  auto dg = nn::backward(m.decoder, dec.tape, ((2.0 / dim) * inv_n * err).eval());
  out.d_decoder = std::move(dg.params);
  Matrix d_enc(2 * L, n);
  d_enc.topRows(L) = kl_weight * inv_n * mean + dg.input;
  d_enc.bottomRows(L) = kl_weight * inv_n * (sd.array().square() - 1.0).matrix() + dg.input.cwiseProduct(eps).cwiseProduct(sd);
  out.d_encoder = nn::backward(m.encoder, enc.tape, d_enc).params;
  return out;
}

struct VaeTrainOptions {
  int epochs = 3;
  std::size_t batch_size = 1024;
  double lr = 1e-4;
  double kl_weight = 1.0;

  static VaeTrainOptions from(const GeneConfig& c) { return {c.epochs, c.batch_size, c.lr, c.kl_weight}; }
};

// Trains in place; returns per-epoch mean total loss.
inline std::vector<double> train_vae(VaeModel& m, const std::vector<Vector>& states, const VaeTrainOptions& opt,
                                     Rng& rng) {
  require(!states.empty(), "train_vae: need at least one state");
  std::vector<std::size_t> order(states.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> trace;
  const int L = m.config.latent_dim;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const auto n = static_cast<Eigen::Index>(std::min(opt.batch_size, order.size() - start));
      Matrix batch(m.config.state_dim(), n);
      for (Eigen::Index c = 0; c < n; ++c) {
        const auto& s = states[order[start + static_cast<std::size_t>(c)]];
        require(s.size() == m.config.state_dim(), "train_vae: state has wrong dimension");
        batch.col(c) = s;
      }
      Matrix eps(L, n);
      for (Eigen::Index c = 0; c < n; ++c)
        for (Eigen::Index r = 0; r < L; ++r) eps(r, c) = rng.normal();
      auto l = vae_loss(m, batch, eps, opt.kl_weight);
      if (!std::isfinite(l.total)) throw DivergedError("train_vae: non-finite loss in epoch " + std::to_string(epoch));
      nn::adam_step(m.encoder, l.d_encoder, m.encoder_opt, opt.lr);
      nn::adam_step(m.decoder, l.d_decoder, m.decoder_opt, opt.lr);
      total += static_cast<double>(n) * l.total;
    }
    trace.push_back(total / static_cast<double>(states.size()));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// One-dimensional Gaussian KDE

class KdeModel {
 public:
  KdeModel(std::vector<double> samples, double bandwidth) : samples_(std::move(samples)), h_(bandwidth) {
    require(!samples_.empty(), "fit_kde: need at least one latent");
    require(h_ > 0.0, "fit_kde: bandwidth must be positive");
  }

  const std::vector<double>& samples() const { return samples_; }
  double bandwidth() const { return h_; }

  double density(double x) const {
    const double norm = 1.0 / (h_ * std::sqrt(2.0 * std::numbers::pi));
    double acc = 0.0;
    for (double z : samples_) {
      const double u = (x - z) / h_;
      acc += std::exp(-0.5 * u * u);
    }
    return norm * acc / static_cast<double>(samples_.size());
  }

  double cdf(double x) const {
    double acc = 0.0;
    for (double z : samples_) acc += 0.5 * std::erfc(-(x - z) / (h_ * std::numbers::sqrt2));
    return acc / static_cast<double>(samples_.size());
  }

  // Pick a stored sample uniformly, perturb by N(0, h^2).
  double sample(Rng& rng) const { return samples_[rng.index(samples_.size())] + rng.normal(0.0, h_); }

 private:
  std::vector<double> samples_;
  double h_;
};

inline KdeModel fit_kde(std::vector<double> latents, double bandwidth = 0.05) {
  return KdeModel(std::move(latents), bandwidth);
}

inline std::vector<Vector> sample_states(const VaeModel& vae, const KdeModel& kde, int n, Rng& rng) {
  require(vae.config.latent_dim == 1, "sample_states: the KDE is one-dimensional");
  std::vector<Vector> out;
  if (n <= 0) return out;
  Matrix z(1, n);
  for (int c = 0; c < n; ++c) z(0, c) = kde.sample(rng);
  const Matrix s = decode(vae, z);
  out.reserve(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) out.emplace_back(s.col(c));
  return out;
}

struct GeneRefresh {
  relational::GenerationPool pool;
  std::vector<double> trace;
};

// Fresh VAE trained on `states`, KDE over their latent means, pool of decoded draws.
inline GeneRefresh reinit_and_refresh(VaeModel& m, const std::vector<Vector>& states, Rng& rng) {
  require(!states.empty(), "gene refresh: no states since the last refresh");
  m = make_vae(m.config, rng);
  GeneRefresh r;
  r.trace = train_vae(m, states, VaeTrainOptions::from(m.config), rng);
  Matrix all(m.config.state_dim(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t c = 0; c < states.size(); ++c) all.col(static_cast<Eigen::Index>(c)) = states[c];
  const Matrix mu = encode_means(m, all);
  std::vector<double> latents(mu.data(), mu.data() + mu.cols());
  const auto kde = fit_kde(std::move(latents), m.config.bandwidth);
  r.pool.states = sample_states(m, kde, m.config.pool_size, rng);
  r.pool.p_generated = m.config.p_generated;
  return r;
}

}  // namespace remax::gene
