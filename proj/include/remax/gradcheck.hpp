#pragma once

// Central finite-difference checks of the analytic gradients: random MLPs
// and the joint VGAE + surrogate objective. Used by the `gradcheck` command.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "remax/gat.hpp"
#include "remax/nn.hpp"
#include "remax/remax.hpp"
#include "remax/rng.hpp"

namespace remax::gradcheck {

using nn::Matrix;
using nn::Vector;

struct Report {
  std::string name;
  int cases = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool pass() const { return max_rel_error < tolerance; }
};

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Largest relative error between `analytic` and central differences of `loss`
// over every entry of every tensor of `params`.
template <class Params>
double compare(Params& params, const Params& analytic, const std::function<double()>& loss, double h = 1e-5) {
  auto pv = nn::tensor_views(params);
  auto av = nn::tensor_views(analytic);
  double worst = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    for (std::size_t j = 0; j < pv[i].size(); ++j) {
      const double keep = pv[i][j];
      pv[i][j] = keep + h;
      const double up = loss();
      pv[i][j] = keep - h;
      const double down = loss();
      pv[i][j] = keep;
      worst = std::max(worst, rel_error(av[i][j], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

inline nn::MlpSpec random_spec(Rng& rng) {
  const int depth = 1 + static_cast<int>(rng.index(3));
  std::vector<int> sizes;
  for (int l = 0; l <= depth; ++l) sizes.push_back(1 + static_cast<int>(rng.index(8)));
  const auto hidden = rng.bernoulli(0.5) ? nn::HiddenActivation::relu() : nn::HiddenActivation::leaky_relu(0.2);
  const nn::OutputKind outs[] = {nn::OutputKind::identity, nn::OutputKind::softmax, nn::OutputKind::tanh};
  return {sizes, hidden, outs[rng.index(3)]};
}

// Loss = sum(upstream .* net(x)) on random nets, inputs and upstream weights;
// checks parameter and input gradients.
inline Report mlp_suite(int nets, Rng& rng) {
  Report r{"mlp", nets, 0.0, 1e-4};
  for (int k = 0; k < nets; ++k) {
    auto p = nn::xavier_init(random_spec(rng), rng);
    for (auto& l : p.layers)
      for (auto& b : l.bias) b = rng.uniform(-0.5, 0.5);
    const auto batch = static_cast<Eigen::Index>(1 + rng.index(4));
    Matrix x(p.spec.input_size(), batch);
    for (auto& v : x.reshaped()) v = rng.uniform(-1.0, 1.0);
    Matrix u(p.spec.output_size(), batch);
    for (auto& v : u.reshaped()) v = rng.uniform(-1.0, 1.0);

    auto f = nn::forward(p, x);
    const auto g = nn::backward(p, f.tape, u);
    auto loss = [&] { return nn::evaluate(p, x).cwiseProduct(u).sum(); };
    r.max_rel_error = std::max(r.max_rel_error, compare(p, g.params, loss));

    const double h = 1e-5;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + h;
      const double up = loss();
      x.data()[i] = keep - h;
      const double down = loss();
      x.data()[i] = keep;
      r.max_rel_error = std::max(r.max_rel_error, rel_error(g.input.data()[i], (up - down) / (2.0 * h)));
    }
  }
  return r;
}

// Full composite loss on a small batch, all three parameter groups.
inline Report composite_suite(Rng& rng, int agents = 2, int heads = 2, int latent = 2, int states = 3) {
  relational::RemaxConfig cfg;
  cfg.n_agents = agents;
  cfg.heads = heads;
  cfg.latent_dim = latent;
  cfg.hidden_features = 4;
  cfg.decoder_hidden = {6, 5};
  cfg.surrogate_hidden = {6, 5};
  auto m = relational::make_model(cfg, rng);
  std::vector<relational::ScoredState> data;
  for (int k = 0; k < states; ++k) {
    Vector s(cfg.state_dim());
    for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    data.push_back({s, rng.normal()});
  }
  std::vector<const relational::ScoredState*> batch;
  for (const auto& s : data) batch.push_back(&s);
  Matrix eps(latent, states);
  for (auto& v : eps.reshaped()) v = rng.normal();
  const double beta = 1.0;

  const auto l = relational::composite_loss(m, batch, eps, beta);
  auto loss = [&] { return relational::composite_loss(m, batch, eps, beta).total; };
  Report r{"composite", 1, 0.0, 1e-3};
  r.max_rel_error = std::max(r.max_rel_error, compare(m.encoder, l.d_encoder, loss));
  r.max_rel_error = std::max(r.max_rel_error, compare(m.decoder, l.d_decoder, loss));
  r.max_rel_error = std::max(r.max_rel_error, compare(m.surrogate, l.d_surrogate, loss));
  return r;
}

}  // namespace remax::gradcheck
