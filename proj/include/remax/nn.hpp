#pragma once

// Dense-network substrate: Xavier init, batched forward with a gradient tape,
// exact reverse-mode backward, and Adam. Samples are stored column-wise
// (input matrix is fan_in x batch).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "remax/errors.hpp"
#include "remax/rng.hpp"

namespace remax::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class HiddenKind { relu, leaky_relu };
enum class OutputKind { identity, softmax, tanh };

struct HiddenActivation {
  HiddenKind kind = HiddenKind::relu;
  double slope = 0.2;  // leaky_relu only

  static HiddenActivation relu() { return {HiddenKind::relu, 0.0}; }
  static HiddenActivation leaky_relu(double slope = 0.2) { return {HiddenKind::leaky_relu, slope}; }
};

struct MlpSpec {
  std::vector<int> layer_sizes;
  HiddenActivation hidden = HiddenActivation::relu();
  OutputKind output = OutputKind::identity;

  MlpSpec() = default;
  MlpSpec(std::vector<int> sizes, HiddenActivation h, OutputKind o)
      : layer_sizes(std::move(sizes)), hidden(h), output(o) {
    validate();
  }

  void validate() const {
    require(layer_sizes.size() >= 2, "MlpSpec: need at least input and output sizes");
    for (int s : layer_sizes) require(s >= 1, "MlpSpec: layer sizes must be >= 1");
    if (hidden.kind == HiddenKind::leaky_relu)
      require(hidden.slope > 0.0 && hidden.slope < 1.0, "MlpSpec: leaky-relu slope must be in (0,1)");
  }

  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }

  friend bool operator==(const MlpSpec& a, const MlpSpec& b) {
    return a.layer_sizes == b.layer_sizes && a.hidden.kind == b.hidden.kind &&
           a.hidden.slope == b.hidden.slope && a.output == b.output;
  }
};

struct DenseLayer {
  Matrix weight;  // fan_out x fan_in
  Vector bias;    // fan_out
};

// Weights and biases of one network. `revision` increases on every in-place
// update so that tapes recorded against older values are rejected.
struct MlpParams {
  MlpSpec spec;
  std::vector<DenseLayer> layers;
  std::uint64_t revision = 0;

  static MlpParams zeros(const MlpSpec& spec) {
    spec.validate();
    MlpParams p;
    p.spec = spec;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const int in = spec.layer_sizes[l];
      const int out = spec.layer_sizes[l + 1];
      p.layers.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
    }
    return p;
  }

  bool same_shape(const MlpParams& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].weight.rows() != o.layers[l].weight.rows() ||
          layers[l].weight.cols() != o.layers[l].weight.cols() ||
          layers[l].bias.size() != o.layers[l].bias.size())
        return false;
    }
    return true;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }
};

template <class F>
void for_each_tensor(MlpParams& p, F&& f) {
  for (auto& l : p.layers) {
    f(std::span<double>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
    f(std::span<double>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
  }
}

template <class F>
void for_each_tensor(const MlpParams& p, F&& f) {
  for (const auto& l : p.layers) {
    f(std::span<const double>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
    f(std::span<const double>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
  }
}

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline void xavier_fill(Matrix& w, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  // Column-major fill order keeps the draw sequence independent of Eigen internals.
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-bound, bound);
}

inline MlpParams xavier_init(const MlpSpec& spec, Rng& rng) {
  MlpParams p = MlpParams::zeros(spec);
  for (auto& l : p.layers) xavier_fill(l.weight, rng);
  return p;
}

// Recorded intermediates of one forward call.
struct Tape {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  Matrix output;
  std::uint64_t revision = 0;
  std::vector<int> layer_sizes;
};

struct ForwardResult {
  Matrix output;
  Tape tape;
};

struct Gradients {
  MlpParams params;  // same layout as the network; empty layers when skipped
  Matrix input;      // fan_in x batch
};

namespace detail {

inline void apply_hidden(const HiddenActivation& act, Matrix& z) {
  if (act.kind == HiddenKind::relu) {
    z = z.cwiseMax(0.0);
  } else {
    const double s = act.slope;
    z = z.unaryExpr([s](double x) { return x > 0.0 ? x : s * x; });
  }
}

inline void hidden_backward(const HiddenActivation& act, const Matrix& pre, Matrix& g) {
  if (act.kind == HiddenKind::relu) {
    g = (pre.array() > 0.0).select(g, 0.0);
  } else {
    const double s = act.slope;
    g = (pre.array() > 0.0).select(g, s * g);
  }
}

inline void softmax_columns(Matrix& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    auto col = z.col(c);
    const double m = col.maxCoeff();
    col = (col.array() - m).exp();
    col /= col.sum();
  }
}

inline void apply_output(OutputKind kind, Matrix& z) {
  switch (kind) {
    case OutputKind::identity:
      break;
    case OutputKind::softmax:
      softmax_columns(z);
      break;
    case OutputKind::tanh:
      z = z.array().tanh();
      break;
  }
}

// Gradient w.r.t. pre-activation given gradient w.r.t. output `y`.
inline Matrix output_backward(OutputKind kind, const Matrix& y, const Matrix& g) {
  switch (kind) {
    case OutputKind::identity:
      return g;
    case OutputKind::softmax: {
      Matrix d(g.rows(), g.cols());
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        const double dot = y.col(c).dot(g.col(c));
        d.col(c) = y.col(c).array() * (g.col(c).array() - dot);
      }
      return d;
    }
    case OutputKind::tanh:
      return (g.array() * (1.0 - y.array().square())).matrix();
  }
  return g;
}

}  // namespace detail

// Plain evaluation without recording.
inline Matrix evaluate(const MlpParams& p, const Matrix& x) {
  require(x.rows() == p.spec.input_size(), "forward: input length " + std::to_string(x.rows()) +
                                               " != " + std::to_string(p.spec.input_size()));
  Matrix a = x;
  const std::size_t n = p.layers.size();
  for (std::size_t l = 0; l < n; ++l) {
    Matrix z = p.layers[l].weight * a;
    z.colwise() += p.layers[l].bias;
    if (l + 1 < n)
      detail::apply_hidden(p.spec.hidden, z);
    else
      detail::apply_output(p.spec.output, z);
    a = std::move(z);
  }
  return a;
}

inline Vector evaluate(const MlpParams& p, const Vector& x) {
  return evaluate(p, Matrix(x));
}

inline ForwardResult forward(const MlpParams& p, const Matrix& x) {
  require(x.rows() == p.spec.input_size(), "forward: input length " + std::to_string(x.rows()) +
                                               " != " + std::to_string(p.spec.input_size()));
  ForwardResult r;
  r.tape.revision = p.revision;
  r.tape.layer_sizes = p.spec.layer_sizes;
  const std::size_t n = p.layers.size();
  r.tape.inputs.reserve(n);
  r.tape.pre.reserve(n);
  Matrix a = x;
  for (std::size_t l = 0; l < n; ++l) {
    Matrix z = p.layers[l].weight * a;
    z.colwise() += p.layers[l].bias;
    r.tape.inputs.push_back(std::move(a));
    r.tape.pre.push_back(z);
    if (l + 1 < n)
      detail::apply_hidden(p.spec.hidden, z);
    else
      detail::apply_output(p.spec.output, z);
    a = std::move(z);
  }
  r.tape.output = a;
  r.output = std::move(a);
  return r;
}

inline ForwardResult forward(const MlpParams& p, const Vector& x) { return forward(p, Matrix(x)); }

enum class GradTarget { params_and_input, input_only };

// Reverse pass. `upstream` is dLoss/dOutput with the same shape as the output;
// `pre_output` optionally adds dLoss/d(last pre-activation).
inline Gradients backward(const MlpParams& p, const Tape& tape, const Matrix& upstream,
                          GradTarget target = GradTarget::params_and_input, const Matrix* pre_output = nullptr) {
  require(tape.revision == p.revision && tape.layer_sizes == p.spec.layer_sizes,
          "backward: tape was recorded against different parameters");
  require(upstream.rows() == tape.output.rows() && upstream.cols() == tape.output.cols(),
          "backward: upstream gradient shape does not match output");
  const std::size_t n = p.layers.size();
  Gradients g;
  const bool want_params = target == GradTarget::params_and_input;
  if (want_params) {
    g.params.spec = p.spec;
    g.params.layers.resize(n);
  }
  Matrix d = detail::output_backward(p.spec.output, tape.output, upstream);
  if (pre_output) {
    require(pre_output->rows() == d.rows() && pre_output->cols() == d.cols(),
            "backward: pre-activation gradient shape does not match output");
    d += *pre_output;
  }
  for (std::size_t l = n; l-- > 0;) {
    if (l + 1 < n) detail::hidden_backward(p.spec.hidden, tape.pre[l], d);
    if (want_params) {
      g.params.layers[l].weight.noalias() = d * tape.inputs[l].transpose();
      g.params.layers[l].bias = d.rowwise().sum();
    }
    Matrix next = p.layers[l].weight.transpose() * d;
    d = std::move(next);
  }
  g.input = std::move(d);
  return g;
}

inline Gradients backward(const MlpParams& p, const Tape& tape, const Vector& upstream,
                          GradTarget target = GradTarget::params_and_input) {
  return backward(p, tape, Matrix(upstream), target);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Vector> m;
  std::vector<Vector> v;
  std::int64_t step = 0;
  AdamConfig config;

  template <class Params>
  static AdamState for_params(const Params& p, AdamConfig cfg = {}) {
    AdamState s;
    s.config = cfg;
    for_each_tensor(p, [&](std::span<const double> t) {
      s.m.push_back(Vector::Zero(static_cast<Eigen::Index>(t.size())));
      s.v.push_back(Vector::Zero(static_cast<Eigen::Index>(t.size())));
    });
    return s;
  }
};

template <class Params>
std::vector<std::span<double>> tensor_views(Params& p) {
  std::vector<std::span<double>> out;
  for_each_tensor(p, [&](std::span<double> t) { out.push_back(t); });
  return out;
}

template <class Params>
std::vector<std::span<const double>> tensor_views(const Params& p) {
  std::vector<std::span<const double>> out;
  for_each_tensor(p, [&](std::span<const double> t) { out.push_back(t); });
  return out;
}

// One bias-corrected Adam step (descent). Throws DivergedError on a
// non-finite gradient, leaving params and state untouched.
template <class Params>
void adam_step(Params& params, const Params& grads, AdamState& state, double lr) {
  require(lr > 0.0, "adam_step: learning rate must be positive");
  auto pv = tensor_views(params);
  auto gv = tensor_views(grads);
  require(pv.size() == gv.size() && pv.size() == state.m.size(), "adam_step: tensor count mismatch");
  for (std::size_t i = 0; i < pv.size(); ++i) {
    require(pv[i].size() == gv[i].size() && static_cast<Eigen::Index>(pv[i].size()) == state.m[i].size(),
            "adam_step: tensor shape mismatch");
    for (double x : gv[i])
      if (!std::isfinite(x)) throw DivergedError("adam_step: non-finite gradient");
  }
  const auto& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < pv.size(); ++i) {
    Eigen::Map<Vector> p(pv[i].data(), static_cast<Eigen::Index>(pv[i].size()));
    Eigen::Map<const Vector> g(gv[i].data(), static_cast<Eigen::Index>(gv[i].size()));
    Vector& m = state.m[i];
    Vector& v = state.v[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
  if constexpr (requires { params.revision; }) ++params.revision;
}

// target <- (1 - tau) * target + tau * source
template <class Params>
void soft_update(Params& target, const Params& source, double tau) {
  auto tv = tensor_views(target);
  auto sv = tensor_views(source);
  require(tv.size() == sv.size(), "soft_update: tensor count mismatch");
  for (std::size_t i = 0; i < tv.size(); ++i) {
    require(tv[i].size() == sv[i].size(), "soft_update: tensor shape mismatch");
    for (std::size_t j = 0; j < tv[i].size(); ++j) tv[i][j] = (1.0 - tau) * tv[i][j] + tau * sv[i][j];
  }
  if constexpr (requires { target.revision; }) ++target.revision;
}

template <class Params>
void scale_in_place(Params& p, double s) {
  for_each_tensor(p, [s](std::span<double> t) {
    for (double& x : t) x *= s;
  });
}

// a += b (same layout)
template <class Params>
void accumulate(Params& a, const Params& b) {
  auto av = tensor_views(a);
  auto bv = tensor_views(b);
  require(av.size() == bv.size(), "accumulate: tensor count mismatch");
  for (std::size_t i = 0; i < av.size(); ++i)
    for (std::size_t j = 0; j < av[i].size(); ++j) av[i][j] += bv[i][j];
}

}  // namespace remax::nn
