#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace globediff {

enum class ScheduleKind { linear, cosine };

inline std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "cosine";
}

inline ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "linear") return ScheduleKind::linear;
  if (text == "cosine") return ScheduleKind::cosine;
  throw InvalidArgument("unknown schedule kind '" + std::string(text) + "'");
}

// Descriptor from which a schedule is rebuilt; this is what checkpoints store.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::linear;
  int num_steps = 5;
  double beta_lo = 1e-4;
  double beta_hi = 0.02;

  bool operator==(const ScheduleSpec&) const = default;
};

// Noise schedule for a K-step forward process. Steps are 1-based in the
// public API: betas[k - 1] holds beta^k.
class DiffusionSchedule {
 public:
  static constexpr double kMaxBeta = 0.999;

  explicit DiffusionSchedule(const ScheduleSpec& spec) : spec_(spec) {
    if (spec.num_steps < 1) throw InvalidArgument("schedule: K must be >= 1");
    if (!(spec.beta_lo > 0.0) || !(spec.beta_lo <= spec.beta_hi) || !(spec.beta_hi < 1.0)) {
      throw InvalidArgument("schedule: need 0 < beta_lo <= beta_hi < 1");
    }
    const int K = spec.num_steps;
    betas_.resize(K);
    if (spec.kind == ScheduleKind::linear) {
      for (int k = 0; k < K; ++k) {
        const double t = K == 1 ? 0.0 : static_cast<double>(k) / (K - 1);
        betas_[k] = spec.beta_lo + t * (spec.beta_hi - spec.beta_lo);
      }
    } else {
      // Squared-cosine alpha-bar profile with offset 0.008; beta_lo/beta_hi
      // are validated but do not shape this kind.
      constexpr double offset = 0.008;
      auto f = [&](double t) {
        const double c = std::cos((t / K + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
        return c * c;
      };
      const double f0 = f(0.0);
      for (int k = 0; k < K; ++k) {
        const double prev = f(k) / f0;
        const double next = f(k + 1) / f0;
        betas_[k] = std::clamp(1.0 - next / prev, 1e-12, kMaxBeta);
      }
    }

    alphas_.resize(K);
    alpha_bars_.resize(K);
    double bar = 1.0;
    for (int k = 0; k < K; ++k) {
      alphas_[k] = 1.0 - betas_[k];
      bar *= alphas_[k];
      alpha_bars_[k] = bar;
    }
    if (!(alpha_bars_[0] < 1.0)) throw InvalidArgument("schedule: beta too small, 1 - alpha_bar rounds to zero");

    // A_k = prod_{i=k+1}^K alpha_i^{-1/2} * (1 - alpha_k) / sqrt(alpha_k (1 - abar_k))
    step_coeffs_.resize(K);
    double tail = 1.0;
    for (int k = K - 1; k >= 0; --k) {
      const double local = (1.0 - alphas_[k]) / std::sqrt(alphas_[k] * (1.0 - alpha_bars_[k]));
      step_coeffs_[k] = tail * local;
      tail /= std::sqrt(alphas_[k]);
    }
    c1_ = 0.0;
    for (double a : step_coeffs_) c1_ = std::max(c1_, a * a);
  }

  const ScheduleSpec& spec() const { return spec_; }
  int num_steps() const { return spec_.num_steps; }

  double beta(int k) const { return betas_[index(k)]; }
  double alpha(int k) const { return alphas_[index(k)]; }
  double alpha_bar(int k) const { return alpha_bars_[index(k)]; }
  double step_coeff(int k) const { return step_coeffs_[index(k)]; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::vector<double>& step_coeffs() const { return step_coeffs_; }
  double c1() const { return c1_; }

  void check_step(int k) const {
    if (k < 1 || k > spec_.num_steps) {
      throw InvalidArgument("step " + std::to_string(k) + " outside [1, " +
                            std::to_string(spec_.num_steps) + "]");
    }
  }

 private:
  std::size_t index(int k) const {
    check_step(k);
    return static_cast<std::size_t>(k - 1);
  }

  ScheduleSpec spec_;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> step_coeffs_;
  double c1_ = 0.0;
};

inline DiffusionSchedule build_schedule(ScheduleKind kind, int num_steps, double beta_lo, double beta_hi) {
  return DiffusionSchedule(ScheduleSpec{kind, num_steps, beta_lo, beta_hi});
}

// s^k = sqrt(abar_k) s0 + sqrt(1 - abar_k) eps
template <typename StateExpr, typename NoiseExpr>
Eigen::VectorXd forward_noise(const DiffusionSchedule& sched, const Eigen::MatrixBase<StateExpr>& s0,
                              int k, const Eigen::MatrixBase<NoiseExpr>& eps) {
  expect_dim("forward_noise", static_cast<std::size_t>(s0.size()), static_cast<std::size_t>(eps.size()));
  const double abar = sched.alpha_bar(k);
  return std::sqrt(abar) * s0 + std::sqrt(1.0 - abar) * eps;
}

// One reverse update. At k == 1 the injected noise is dropped so that s^0 is
// the mean prediction.
template <typename A, typename B, typename C>
Eigen::VectorXd reverse_step(const DiffusionSchedule& sched, const Eigen::MatrixBase<A>& sk,
                             const Eigen::MatrixBase<B>& eps_pred, int k, const Eigen::MatrixBase<C>& noise) {
  expect_dim("reverse_step(eps_pred)", static_cast<std::size_t>(sk.size()), static_cast<std::size_t>(eps_pred.size()));
  expect_dim("reverse_step(noise)", static_cast<std::size_t>(sk.size()), static_cast<std::size_t>(noise.size()));
  const double beta = sched.beta(k);
  const double alpha = sched.alpha(k);
  const double abar = sched.alpha_bar(k);
  Eigen::VectorXd mean = (sk - (beta / std::sqrt(1.0 - abar)) * eps_pred) / std::sqrt(alpha);
  if (k > 1) mean += std::sqrt(beta) * noise;
  return mean;
}

struct AccumulationConstants {
  std::vector<double> coeffs;  // A_1..A_K
  double c1 = 0.0;
  double sum_sq = 0.0;  // sum_k A_k^2
};

inline AccumulationConstants accumulation_constants(const DiffusionSchedule& sched) {
  AccumulationConstants out{sched.step_coeffs(), sched.c1(), 0.0};
  for (double a : out.coeffs) out.sum_sq += a * a;
  return out;
}

}  // namespace globediff
