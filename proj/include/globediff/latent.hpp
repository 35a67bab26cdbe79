#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "netcore.hpp"

namespace globediff {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian over the latent, parameterized by a network whose output
// is [mu; logvar] (2 * latent_dim rows).
struct GaussianHead {
  Network net;
  std::size_t latent_dim = 0;

  std::size_t input_dim() const { return net.input_dim(); }
  bool operator==(const GaussianHead&) const = default;
};

inline GaussianHead make_gaussian_head(std::size_t cond_dim, const std::vector<std::size_t>& hidden,
                                       std::size_t latent_dim, std::uint64_t seed) {
  if (latent_dim == 0) throw InvalidArgument("gaussian head: latent dim must be positive");
  std::vector<std::size_t> dims{cond_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(2 * latent_dim);
  return GaussianHead{init_network(std::move(dims), Activation::relu, seed), latent_dim};
}

struct GaussianParams {
  Eigen::MatrixXd mu;      // latent_dim x batch
  Eigen::MatrixXd logvar;  // clamped, latent_dim x batch
};

struct HeadPass {
  GaussianParams params;
  ForwardCache cache;
};

inline HeadPass head_forward_batch(const GaussianHead& head, const Eigen::MatrixXd& cond) {
  expect_dim("head_forward", head.input_dim(), static_cast<std::size_t>(cond.rows()));
  if (head.net.output_dim() != 2 * head.latent_dim) {
    throw InvalidArgument("gaussian head: network output must be 2 * latent_dim");
  }
  HeadPass pass{{}, forward_cached(head.net, cond)};
  const auto d = static_cast<Eigen::Index>(head.latent_dim);
  pass.params.mu = pass.cache.output.topRows(d);
  pass.params.logvar = pass.cache.output.bottomRows(d).cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  return pass;
}

struct GaussianVec {
  Eigen::VectorXd mu;
  Eigen::VectorXd logvar;
};

inline GaussianVec head_forward(const GaussianHead& head, const Eigen::VectorXd& cond) {
  auto pass = head_forward_batch(head, Eigen::MatrixXd(cond));
  return {pass.params.mu.col(0), pass.params.logvar.col(0)};
}

// Back-propagates d/dmu and d/dlogvar through the clamp and the head network.
inline Gradients head_backward(const GaussianHead& head, const HeadPass& pass, const Eigen::MatrixXd& grad_mu,
                               const Eigen::MatrixXd& grad_logvar) {
  const auto d = static_cast<Eigen::Index>(head.latent_dim);
  Eigen::MatrixXd grad_out(2 * d, grad_mu.cols());
  grad_out.topRows(d) = grad_mu;
  const auto raw = pass.cache.output.bottomRows(d);
  grad_out.bottomRows(d) = grad_logvar.binaryExpr(raw, [](double g, double r) {
    return (r > kLogVarMin && r < kLogVarMax) ? g : 0.0;
  });
  return backward(head.net, pass.cache, grad_out);
}

// z = mu + exp(logvar / 2) * eps
template <typename A, typename B, typename C>
auto reparameterize(const Eigen::MatrixBase<A>& mu, const Eigen::MatrixBase<B>& logvar, const Eigen::MatrixBase<C>& eps)
    -> Eigen::Matrix<double, Eigen::Dynamic, A::ColsAtCompileTime> {
  if (mu.rows() != logvar.rows() || mu.rows() != eps.rows() || mu.cols() != logvar.cols() || mu.cols() != eps.cols()) {
    throw DimensionMismatch("reparameterize", static_cast<std::size_t>(mu.size()), static_cast<std::size_t>(eps.size()));
  }
  return mu + (0.5 * logvar.array()).exp().matrix().cwiseProduct(eps);
}

// KL(N(mu_q, diag exp(lv_q)) || N(mu_p, diag exp(lv_p))), one value per column.
inline Eigen::RowVectorXd kl_diag_gaussians_batch(const Eigen::MatrixXd& mu_q, const Eigen::MatrixXd& lv_q,
                                                  const Eigen::MatrixXd& mu_p, const Eigen::MatrixXd& lv_p) {
  if (mu_q.rows() != lv_q.rows() || mu_q.rows() != mu_p.rows() || mu_q.rows() != lv_p.rows() ||
      mu_q.cols() != lv_q.cols() || mu_q.cols() != mu_p.cols() || mu_q.cols() != lv_p.cols()) {
    throw DimensionMismatch("kl_diag_gaussians", static_cast<std::size_t>(mu_q.size()),
                            static_cast<std::size_t>(mu_p.size()));
  }
  const Eigen::ArrayXXd diff = (mu_q - mu_p).array();
  const Eigen::ArrayXXd terms =
      lv_p.array() - lv_q.array() + (lv_q.array().exp() + diff.square()) / lv_p.array().exp() - 1.0;
  return 0.5 * terms.colwise().sum().matrix();
}

inline double kl_diag_gaussians(const Eigen::VectorXd& mu_q, const Eigen::VectorXd& lv_q, const Eigen::VectorXd& mu_p,
                                const Eigen::VectorXd& lv_p) {
  return kl_diag_gaussians_batch(mu_q, lv_q, mu_p, lv_p)(0);
}

struct KlGradients {
  Eigen::MatrixXd mu_q, logvar_q, mu_p, logvar_p;
};

// Partial derivatives of sum_columns(scale_c * KL_c).
inline KlGradients kl_diag_gaussians_grad(const Eigen::MatrixXd& mu_q, const Eigen::MatrixXd& lv_q,
                                          const Eigen::MatrixXd& mu_p, const Eigen::MatrixXd& lv_p, double scale) {
  const Eigen::ArrayXXd inv_var_p = (-lv_p.array()).exp();
  const Eigen::ArrayXXd diff = (mu_q - mu_p).array();
  const Eigen::ArrayXXd var_q = lv_q.array().exp();
  KlGradients g;
  g.mu_q = (scale * diff * inv_var_p).matrix();
  g.mu_p = -g.mu_q;
  g.logvar_q = (scale * 0.5 * (var_q * inv_var_p - 1.0)).matrix();
  g.logvar_p = (scale * 0.5 * (1.0 - (var_q + diff.square()) * inv_var_p)).matrix();
  return g;
}

}  // namespace globediff
