#pragma once

// Multi-head graph attention encoder over agent nodes, producing the mean and
// log-std of a Gaussian latent. The graph is complete (every node attends to
// every node, itself included).

#include <cmath>
#include <concepts>
#include <span>
#include <type_traits>
#include <vector>

#include "remax/errors.hpp"
#include "remax/nn.hpp"
#include "remax/rng.hpp"

namespace remax::relational {

using nn::Matrix;
using nn::Vector;

struct GatShape {
  int nodes = 1;
  int features = 4;          // F
  int hidden_features = 16;  // F'
  int heads = 1;             // K
  int latent_dim = 1;
  double leaky_slope = 0.2;

  int embedding_size() const { return nodes * heads * hidden_features; }
};

struct GatEncoderParams {
  GatShape shape;
  std::vector<Matrix> projection;  // per head, F' x F
  std::vector<Vector> attention;   // per head, 2F'
  Matrix mean_weight;              // latent x (N K F')
  Vector mean_bias;
  Matrix log_std_weight;
  Vector log_std_bias;
  std::uint64_t revision = 0;

  static GatEncoderParams zeros(const GatShape& s) {
    require(s.nodes >= 1 && s.features >= 1 && s.hidden_features >= 1 && s.heads >= 1 && s.latent_dim >= 1,
            "GatShape: all sizes must be >= 1");
    GatEncoderParams p;
    p.shape = s;
    for (int k = 0; k < s.heads; ++k) {
      p.projection.push_back(Matrix::Zero(s.hidden_features, s.features));
      p.attention.push_back(Vector::Zero(2 * s.hidden_features));
    }
    p.mean_weight = Matrix::Zero(s.latent_dim, s.embedding_size());
    p.mean_bias = Vector::Zero(s.latent_dim);
    p.log_std_weight = Matrix::Zero(s.latent_dim, s.embedding_size());
    p.log_std_bias = Vector::Zero(s.latent_dim);
    return p;
  }

  static GatEncoderParams xavier(const GatShape& s, Rng& rng) {
    auto p = zeros(s);
    for (int k = 0; k < s.heads; ++k) {
      nn::xavier_fill(p.projection[static_cast<std::size_t>(k)], rng);
      // attention vector treated as a 1 x 2F' layer
      Matrix row(1, 2 * s.hidden_features);
      nn::xavier_fill(row, rng);
      p.attention[static_cast<std::size_t>(k)] = row.transpose();
    }
    nn::xavier_fill(p.mean_weight, rng);
    nn::xavier_fill(p.log_std_weight, rng);
    return p;
  }
};

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, GatEncoderParams>
void for_each_tensor(P& p, F&& f) {
  using Span = std::conditional_t<std::is_const_v<P>, std::span<const double>, std::span<double>>;
  auto emit = [&](auto& t) { f(Span(t.data(), static_cast<std::size_t>(t.size()))); };
  for (auto& w : p.projection) emit(w);
  for (auto& v : p.attention) emit(v);
  emit(p.mean_weight);
  emit(p.mean_bias);
  emit(p.log_std_weight);
  emit(p.log_std_bias);
}

// Forward intermediates for one state.
struct GatForward {
  Matrix nodes;                    // F x N
  std::vector<Matrix> projected;   // per head, F' x N  (W h_j)
  std::vector<Matrix> logits;      // per head, N x N   (pre-LeakyReLU v^T[Wh_i || Wh_j])
  std::vector<Matrix> attention;   // per head, N x N, rows sum to 1
  std::vector<Matrix> aggregated;  // per head, F' x N, pre-ReLU
  Matrix embeddings;               // K F' x N, column i = h'_i
  Vector flat;                     // N K F', h'_1 || ... || h'_N
  Vector mean;
  Vector log_std;
};

inline GatForward gat_forward(const GatEncoderParams& p, const Vector& state) {
  const auto& s = p.shape;
  require(state.size() == s.nodes * s.features, "gat_encode: state length " + std::to_string(state.size()) +
                                                    " does not reshape to " + std::to_string(s.nodes) + " nodes");
  GatForward f;
  f.nodes = Eigen::Map<const Matrix>(state.data(), s.features, s.nodes);
  f.embeddings.resize(s.heads * s.hidden_features, s.nodes);
  const int fp = s.hidden_features;
  for (int k = 0; k < s.heads; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    Matrix g = p.projection[ku] * f.nodes;
    const Vector src = g.transpose() * p.attention[ku].head(fp);
    const Vector dst = g.transpose() * p.attention[ku].tail(fp);
    Matrix logits = src.replicate(1, s.nodes) + dst.transpose().replicate(s.nodes, 1);
    Matrix e = logits.unaryExpr([slope = s.leaky_slope](double x) { return x > 0.0 ? x : slope * x; });
    Matrix a(s.nodes, s.nodes);
    for (int i = 0; i < s.nodes; ++i) {
      const double m = e.row(i).maxCoeff();
      a.row(i) = (e.row(i).array() - m).exp();
      a.row(i) /= a.row(i).sum();
    }
    Matrix agg = g * a.transpose();
    f.embeddings.middleRows(k * fp, fp) = agg.cwiseMax(0.0);
    f.projected.push_back(std::move(g));
    f.logits.push_back(std::move(logits));
    f.attention.push_back(std::move(a));
    f.aggregated.push_back(std::move(agg));
  }
  f.flat = Eigen::Map<const Vector>(f.embeddings.data(), f.embeddings.size());
  f.mean = p.mean_weight * f.flat + p.mean_bias;
  f.log_std = p.log_std_weight * f.flat + p.log_std_bias;
  return f;
}

// Parameter gradients given dLoss/dmean and dLoss/dlog_std.
inline void gat_backward(const GatEncoderParams& p, const GatForward& f, const Vector& d_mean,
                         const Vector& d_log_std, GatEncoderParams& grads) {
  const auto& s = p.shape;
  grads.mean_weight.noalias() += d_mean * f.flat.transpose();
  grads.mean_bias += d_mean;
  grads.log_std_weight.noalias() += d_log_std * f.flat.transpose();
  grads.log_std_bias += d_log_std;
  const Vector d_flat = p.mean_weight.transpose() * d_mean + p.log_std_weight.transpose() * d_log_std;
  const Eigen::Map<const Matrix> d_emb(d_flat.data(), s.heads * s.hidden_features, s.nodes);
  const int fp = s.hidden_features;
  for (int k = 0; k < s.heads; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Matrix& g = f.projected[ku];
    const Matrix& a = f.attention[ku];
    const Matrix d_agg = (f.aggregated[ku].array() > 0.0).select(d_emb.middleRows(k * fp, fp), 0.0);
    Matrix d_g = d_agg * a;
    const Matrix d_a = d_agg.transpose() * g;
    Matrix d_e(s.nodes, s.nodes);
    for (int i = 0; i < s.nodes; ++i) {
      const double dot = a.row(i).dot(d_a.row(i));
      d_e.row(i) = a.row(i).array() * (d_a.row(i).array() - dot);
    }
    const Matrix d_logits = (f.logits[ku].array() > 0.0).select(d_e, s.leaky_slope * d_e);
    const Vector d_src = d_logits.rowwise().sum();
    const Vector d_dst = d_logits.colwise().sum().transpose();
    const auto v_src = p.attention[ku].head(fp);
    const auto v_dst = p.attention[ku].tail(fp);
    grads.attention[ku].head(fp) += g * d_src;
    grads.attention[ku].tail(fp) += g * d_dst;
    d_g.noalias() += v_src * d_src.transpose();
    d_g.noalias() += v_dst * d_dst.transpose();
    grads.projection[ku].noalias() += d_g * f.nodes.transpose();
  }
}

struct GatEmbedding {
  Matrix embeddings;              // K F' x N, column i = h'_i
  std::vector<Matrix> attention;  // per head, N x N
};

inline GatEmbedding gat_encode(const GatEncoderParams& p, const Vector& state) {
  auto f = gat_forward(p, state);
  return {std::move(f.embeddings), std::move(f.attention)};
}

}  // namespace remax::relational
