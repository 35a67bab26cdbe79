#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "rng.hpp"

namespace globediff {

enum class Activation { relu, mish };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "mish"; }

inline Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::relu;
  if (text == "mish") return Activation::mish;
  throw InvalidArgument("unknown activation '" + std::string(text) + "'");
}

namespace detail {

inline double softplus(double u) { return u > 20.0 ? u : std::log1p(std::exp(u)); }

inline double activate(Activation a, double u) {
  if (a == Activation::relu) return u > 0.0 ? u : 0.0;
  return u * std::tanh(softplus(u));
}

inline double activate_grad(Activation a, double u) {
  if (a == Activation::relu) return u > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(softplus(u));
  const double sigmoid = 1.0 / (1.0 + std::exp(-u));
  return t + u * (1.0 - t * t) * sigmoid;
}

}  // namespace detail

inline double mish(double u) { return detail::activate(Activation::mish, u); }

using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

// Dense feed-forward network. All parameters live in one flat buffer so the
// optimizer and checkpoint code can treat them uniformly. For layer l the
// buffer holds W_l (out x in, column-major) followed by b_l (out).
//
// Hidden layers apply the activation; the last layer is affine. With
// `residual` set, hidden layers after the first whose input and output
// widths agree compute h + act(W h + b).
struct Network {
  std::vector<std::size_t> layer_dims;
  Activation activation = Activation::relu;
  bool residual = false;
  std::vector<double> params;

  std::size_t num_layers() const { return layer_dims.size() - 1; }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }

  std::size_t weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i) off += layer_dims[i + 1] * (layer_dims[i] + 1);
    return off;
  }
  std::size_t bias_offset(std::size_t l) const { return weight_offset(l) + layer_dims[l + 1] * layer_dims[l]; }

  ConstMatrixMap weight(std::size_t l) const {
    return {params.data() + weight_offset(l), static_cast<Eigen::Index>(layer_dims[l + 1]),
            static_cast<Eigen::Index>(layer_dims[l])};
  }
  MatrixMap weight(std::size_t l) {
    return {params.data() + weight_offset(l), static_cast<Eigen::Index>(layer_dims[l + 1]),
            static_cast<Eigen::Index>(layer_dims[l])};
  }
  ConstVectorMap bias(std::size_t l) const {
    return {params.data() + bias_offset(l), static_cast<Eigen::Index>(layer_dims[l + 1])};
  }
  VectorMap bias(std::size_t l) {
    return {params.data() + bias_offset(l), static_cast<Eigen::Index>(layer_dims[l + 1])};
  }

  bool is_skip_layer(std::size_t l) const {
    return residual && l > 0 && l + 1 < num_layers() && layer_dims[l] == layer_dims[l + 1];
  }

  bool operator==(const Network&) const = default;
};

inline std::size_t parameter_count(std::span<const std::size_t> dims) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) n += dims[i] * dims[i + 1] + dims[i + 1];
  return n;
}

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline Network init_network(std::vector<std::size_t> layer_dims, Activation activation, std::uint64_t seed,
                            bool residual = false) {
  if (layer_dims.size() < 2) throw InvalidArgument("init_network: need at least two layer dims");
  for (auto d : layer_dims) {
    if (d == 0) throw InvalidArgument("init_network: layer dims must be positive");
  }
  Network net{std::move(layer_dims), activation, residual, {}};
  net.params.assign(parameter_count(net.layer_dims), 0.0);
  RandomStream rng(seed, "init_network");
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.layer_dims[l]));
    auto w = net.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
  }
  return net;
}

// Activations kept from a batched forward pass; columns are samples.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> pre;     // W a + b for each layer
  Eigen::MatrixXd output;
};

inline ForwardCache forward_cached(const Network& net, const Eigen::MatrixXd& x) {
  expect_dim("network forward", net.input_dim(), static_cast<std::size_t>(x.rows()));
  ForwardCache cache;
  const std::size_t L = net.num_layers();
  cache.inputs.reserve(L);
  cache.pre.reserve(L);
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < L; ++l) {
    cache.inputs.push_back(a);
    Eigen::MatrixXd z = net.weight(l) * a;
    z.colwise() += net.bias(l);
    cache.pre.push_back(z);
    if (l + 1 == L) {
      a = z;
    } else {
      Eigen::MatrixXd h = z.unaryExpr([&](double u) { return detail::activate(net.activation, u); });
      a = net.is_skip_layer(l) ? Eigen::MatrixXd(a + h) : h;
    }
  }
  cache.output = std::move(a);
  return cache;
}

inline Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& x) {
  return forward_cached(net, x).output;
}

inline Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x) {
  return forward_cached(net, Eigen::MatrixXd(x)).output.col(0);
}

struct Gradients {
  std::vector<double> params;  // same layout as Network::params
  Eigen::MatrixXd input;       // d<grad_output, f(x)>/dx, one column per sample
};

// Gradient of sum over columns of <grad_output, forward(net, x)>.
inline Gradients backward(const Network& net, const ForwardCache& cache, const Eigen::MatrixXd& grad_output) {
  expect_dim("network backward (rows)", net.output_dim(), static_cast<std::size_t>(grad_output.rows()));
  expect_dim("network backward (cols)", static_cast<std::size_t>(cache.output.cols()),
             static_cast<std::size_t>(grad_output.cols()));
  Gradients g;
  g.params.assign(net.params.size(), 0.0);
  const std::size_t L = net.num_layers();
  Eigen::MatrixXd delta_a = grad_output;  // gradient w.r.t. layer output a_{l+1}
  for (std::size_t l = L; l-- > 0;) {
    Eigen::MatrixXd delta_z;
    if (l + 1 == L) {
      delta_z = delta_a;
    } else {
      const auto& z = cache.pre[l];
      delta_z = delta_a.cwiseProduct(z.unaryExpr([&](double u) { return detail::activate_grad(net.activation, u); }));
    }
    MatrixMap dw(g.params.data() + net.weight_offset(l), static_cast<Eigen::Index>(net.layer_dims[l + 1]),
                 static_cast<Eigen::Index>(net.layer_dims[l]));
    VectorMap db(g.params.data() + net.bias_offset(l), static_cast<Eigen::Index>(net.layer_dims[l + 1]));
    dw.noalias() = delta_z * cache.inputs[l].transpose();
    db = delta_z.rowwise().sum();
    Eigen::MatrixXd delta_in = net.weight(l).transpose() * delta_z;
    if (l + 1 < L && net.is_skip_layer(l)) delta_in += delta_a;
    delta_a = std::move(delta_in);
  }
  g.input = std::move(delta_a);
  return g;
}

inline Gradients backward(const Network& net, const Eigen::VectorXd& x, const Eigen::VectorXd& grad_output) {
  return backward(net, forward_cached(net, Eigen::MatrixXd(x)), Eigen::MatrixXd(grad_output));
}

// Bias-corrected moment optimizer with decoupled weight decay.
struct OptimizerState {
  double lr = 2e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

inline OptimizerState make_optimizer(const Network& net, double lr, double weight_decay) {
  OptimizerState s;
  s.lr = lr;
  s.weight_decay = weight_decay;
  s.first_moment.assign(net.params.size(), 0.0);
  s.second_moment.assign(net.params.size(), 0.0);
  return s;
}

inline void optimizer_step(OptimizerState& state, Network& net, std::span<const double> grads) {
  expect_dim("optimizer_step", net.params.size(), grads.size());
  expect_dim("optimizer_step (moments)", net.params.size(), state.first_moment.size());
  expect_dim("optimizer_step (moments)", net.params.size(), state.second_moment.size());
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    net.params[i] -= state.lr * (m_hat / (std::sqrt(v_hat) + state.epsilon) + state.weight_decay * net.params[i]);
  }
}

}  // namespace globediff
