#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "hungarian.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "synth.hpp"

namespace globediff {

inline constexpr std::size_t kMaxMatchingSize = 512;

// Exact empirical W2 on the line: match sorted samples.
inline double w2_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("w2_1d: empty input");
  expect_dim("w2_1d", a.size(), b.size());
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) acc += (sa[i] - sb[i]) * (sa[i] - sb[i]);
  return std::sqrt(acc / static_cast<double>(sa.size()));
}

inline double w2_1d(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  return w2_1d(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
               std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

// Exact empirical W2 between two equal-size point clouds (columns are
// points): optimal assignment on squared Euclidean costs.
inline double w2_matching(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() == 0 || b.cols() == 0) throw InvalidArgument("w2_matching: empty input");
  expect_dim("w2_matching (count)", static_cast<std::size_t>(a.cols()), static_cast<std::size_t>(b.cols()));
  expect_dim("w2_matching (dim)", static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(b.rows()));
  if (static_cast<std::size_t>(a.cols()) > kMaxMatchingSize) {
    throw InvalidArgument("w2_matching: n=" + std::to_string(a.cols()) + " exceeds limit " +
                          std::to_string(kMaxMatchingSize));
  }
  const Eigen::Index n = a.cols();
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (a.col(i) - b.col(j)).squaredNorm();
  return std::sqrt(solve_assignment(cost).cost / static_cast<double>(n));
}

struct W2Estimate {
  double w2 = 0.0;
  std::size_t samples_used = 0;
};

// Dimension-aware estimator: sorted matching in 1-D, otherwise exact
// assignment on at most kMaxMatchingSize points drawn with a fixed seed.
inline W2Estimate w2_estimate(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::uint64_t seed = 0) {
  expect_dim("w2_estimate (count)", static_cast<std::size_t>(a.cols()), static_cast<std::size_t>(b.cols()));
  if (a.rows() == 1) return {w2_1d(Eigen::RowVectorXd(a.row(0)), Eigen::RowVectorXd(b.row(0))), static_cast<std::size_t>(a.cols())};
  const auto n = static_cast<std::size_t>(a.cols());
  if (n <= kMaxMatchingSize) return {w2_matching(a, b), n};
  std::vector<Eigen::Index> ia(n), ib(n);
  std::iota(ia.begin(), ia.end(), Eigen::Index{0});
  std::iota(ib.begin(), ib.end(), Eigen::Index{0});
  RandomStream rng(seed, "w2-subsample");
  std::shuffle(ia.begin(), ia.end(), rng.engine());
  std::shuffle(ib.begin(), ib.end(), rng.engine());
  Eigen::MatrixXd sa(a.rows(), static_cast<Eigen::Index>(kMaxMatchingSize));
  Eigen::MatrixXd sb(b.rows(), static_cast<Eigen::Index>(kMaxMatchingSize));
  for (std::size_t i = 0; i < kMaxMatchingSize; ++i) {
    sa.col(static_cast<Eigen::Index>(i)) = a.col(ia[i]);
    sb.col(static_cast<Eigen::Index>(i)) = b.col(ib[i]);
  }
  return {w2_matching(sa, sb), kMaxMatchingSize};
}

struct VoronoiHit {
  std::size_t index = 0;
  Eigen::VectorXd center;
};

// Nearest center by Euclidean distance; ties go to the lowest index.
inline VoronoiHit voronoi_project(const Eigen::VectorXd& s, const std::vector<Eigen::VectorXd>& centers) {
  if (centers.empty()) throw InvalidArgument("voronoi_project: no centers");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers.size(); ++i) {
    expect_dim("voronoi_project", static_cast<std::size_t>(s.size()), static_cast<std::size_t>(centers[i].size()));
    const double dist = (s - centers[i]).squaredNorm();
    if (dist < best_d) {
      best_d = dist;
      best = i;
    }
  }
  return {best, centers[best]};
}

// Var(s|x) = sum_i w_i (tr Sigma_i + ||mu_i(x) - mu_bar(x)||^2)
inline double conditional_variance(const ConditionalGMM& task, const Eigen::VectorXd& x) {
  const auto means = task.mode_means(x);
  Eigen::VectorXd mean_bar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(task.state_dim));
  for (std::size_t i = 0; i < means.size(); ++i) mean_bar += task.modes[i].weight * means[i];
  double var = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    var += task.modes[i].weight * (task.modes[i].variances.sum() + (means[i] - mean_bar).squaredNorm());
  }
  return var;
}

struct Theorem1Result {
  double lhs = 0.0;     // mean ||s_hat - s||^2 over index-paired independent draws
  double lhs_se = 0.0;  // standard error of lhs
  double w2_sq = 0.0;
  std::size_t w2_samples = 0;
  double var_true = 0.0;
  double rhs = 0.0;  // 2 W2^2 + 4 Var(s|x)
  double slack = 0.0;
};

inline Theorem1Result evaluate_theorem1(const Eigen::MatrixXd& model_samples, const Eigen::MatrixXd& true_samples,
                                        double var_true, std::uint64_t seed = 0) {
  if (model_samples.cols() == 0) throw InvalidArgument("evaluate_theorem1: no samples");
  expect_dim("evaluate_theorem1 (count)", static_cast<std::size_t>(model_samples.cols()),
             static_cast<std::size_t>(true_samples.cols()));
  expect_dim("evaluate_theorem1 (dim)", static_cast<std::size_t>(model_samples.rows()),
             static_cast<std::size_t>(true_samples.rows()));
  const Eigen::RowVectorXd sq = (model_samples - true_samples).colwise().squaredNorm();
  const auto n = static_cast<double>(sq.size());
  Theorem1Result r;
  r.lhs = sq.mean();
  r.lhs_se = sq.size() > 1 ? std::sqrt((sq.array() - r.lhs).square().sum() / (n - 1.0) / n) : 0.0;
  const W2Estimate w2 = w2_estimate(model_samples, true_samples, seed);
  r.w2_sq = w2.w2 * w2.w2;
  r.w2_samples = w2.samples_used;
  r.var_true = var_true;
  r.rhs = 2.0 * r.w2_sq + 4.0 * var_true;
  r.slack = r.rhs - r.lhs;
  return r;
}

enum class PropagationOrder {
  // Delta s^0 = sum_k A_k Delta eps_k with the A_k of the error-accumulation
  // constants (amplification by the steps k+1..K).
  lemma_unrolling,
  // The reverse chain's own recursion run from k = K down to 1, where an
  // error injected at step k is amplified by steps 1..k-1.
  reverse_chain,
};

struct PropagationResult {
  double measured = 0.0;        // Monte-Carlo E||Delta s^0||^2
  double measured_se = 0.0;
  double closed_form = 0.0;     // sum_k A_k^2 delta^2 (or its reverse-chain analogue)
  double bound = 0.0;           // C1 K delta^2
  double bound_k2 = 0.0;        // C1 K^2 delta^2
  double reverse_chain_closed_form = 0.0;
};

// Propagates independent per-step noise-prediction errors Delta eps_k with
// E||Delta eps_k||^2 = delta^2 (isotropic Gaussian in R^d) through the
// linearized reverse chain, starting from Delta s^K = 0.
inline PropagationResult error_propagation_mc(const DiffusionSchedule& sched, double delta, std::size_t d,
                                              std::size_t trials, std::uint64_t seed,
                                              PropagationOrder order = PropagationOrder::lemma_unrolling) {
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw InvalidArgument("error_propagation_mc: delta must be finite and >= 0");
  if (trials == 0) throw InvalidArgument("error_propagation_mc: trials must be >= 1");
  if (d == 0) throw InvalidArgument("error_propagation_mc: d must be >= 1");
  const int K = sched.num_steps();
  const double delta_sq = delta * delta;

  // local_k = (1 - alpha_k) / sqrt(alpha_k (1 - abar_k)), the single-step gain.
  std::vector<double> local(static_cast<std::size_t>(K));
  for (int k = 1; k <= K; ++k) {
    local[static_cast<std::size_t>(k - 1)] = (1.0 - sched.alpha(k)) / std::sqrt(sched.alpha(k) * (1.0 - sched.alpha_bar(k)));
  }

  PropagationResult r;
  const auto acc = accumulation_constants(sched);
  r.bound = acc.c1 * K * delta_sq;
  r.bound_k2 = acc.c1 * K * K * delta_sq;
  double reverse_sum = 0.0, amp = 1.0;
  for (int k = 1; k <= K; ++k) {
    reverse_sum += amp * local[static_cast<std::size_t>(k - 1)] * local[static_cast<std::size_t>(k - 1)];
    amp /= sched.alpha(k);
  }
  r.reverse_chain_closed_form = reverse_sum * delta_sq;
  r.closed_form = order == PropagationOrder::lemma_unrolling ? acc.sum_sq * delta_sq : r.reverse_chain_closed_form;

  const double per_coord = std::sqrt(delta_sq / static_cast<double>(d));
  const auto dim = static_cast<Eigen::Index>(d);
  double sum = 0.0, sum_sq = 0.0;
  Eigen::VectorXd err(dim);
  for (std::size_t t = 0; t < trials; ++t) {
    RandomStream rng(seed, "propagation", t);
    err.setZero();
    if (order == PropagationOrder::lemma_unrolling) {
      // err_k = alpha_k^{-1/2} err_{k-1} + local_k Delta eps_k, k = 1..K
      for (int k = 1; k <= K; ++k) {
        err /= std::sqrt(sched.alpha(k));
        for (Eigen::Index j = 0; j < dim; ++j) err[j] += local[static_cast<std::size_t>(k - 1)] * per_coord * rng.normal();
      }
    } else {
      // Delta s^{k-1} = local_k Delta eps_k + alpha_k^{-1/2} Delta s^k, k = K..1
      for (int k = K; k >= 1; --k) {
        err /= std::sqrt(sched.alpha(k));
        for (Eigen::Index j = 0; j < dim; ++j) err[j] += local[static_cast<std::size_t>(k - 1)] * per_coord * rng.normal();
      }
    }
    const double v = err.squaredNorm();
    sum += v;
    sum_sq += v * v;
  }
  const auto n = static_cast<double>(trials);
  r.measured = sum / n;
  r.measured_se = trials > 1 ? std::sqrt(std::max(0.0, (sum_sq - n * r.measured * r.measured) / (n - 1.0)) / n) : 0.0;
  return r;
}

struct Theorem2Result {
  std::vector<double> mode_errors;    // mean ||s_hat - mu_j||^2 over samples projected to mode j
  std::vector<double> mode_coverage;  // fraction of samples projected to mode j
  double nearest_mode_error = 0.0;    // mean ||s_hat - phi(s_hat)||^2 over all samples
  double nearest_mode_error_se = 0.0;
  double within_quarter_fraction = 0.0;  // share of samples within D/4 of some center
  double min_distance = 0.0;             // D
  double max_trace = 0.0;                // max_i tr Sigma_i(x)
  double c2 = 1.0;
  double diffusion_term = 0.0;  // C1 K delta^2
  double latent_term = 0.0;     // C2 eps_KL
  // Appendix form: ... + 2 max tr Sigma + exp(-D^2 / (8 max tr Sigma)).
  double rhs = 0.0;
  // Main-text form: ... + max tr Sigma + exp(-D^2 / (8 sigma_max^2)) with
  // sigma_max^2 = C1 K delta^2 + C2 eps_KL + max tr Sigma.
  double rhs_main = 0.0;
  bool separation_ok = false;    // D > 4 sqrt(C1 K delta^2 + C2 eps_KL + max tr Sigma)
  bool min_distance_ok = false;  // D >= 2 sqrt(d)
};

inline Theorem2Result evaluate_theorem2(const Eigen::MatrixXd& samples, const ConditionalGMM& task,
                                        const Eigen::VectorXd& x, double delta_sq_hat, double eps_kl_hat,
                                        const DiffusionSchedule& sched, double c2 = 1.0) {
  if (samples.cols() == 0) throw InvalidArgument("evaluate_theorem2: no samples");
  expect_dim("evaluate_theorem2", task.state_dim, static_cast<std::size_t>(samples.rows()));
  const auto centers = task.mode_means(x);
  Theorem2Result r;
  r.c2 = c2;
  r.min_distance = task.min_mode_distance(x);
  r.max_trace = task.max_trace();
  r.diffusion_term = sched.c1() * sched.num_steps() * delta_sq_hat;
  r.latent_term = c2 * eps_kl_hat;
  const double core = r.diffusion_term + r.latent_term;
  const double D2 = r.min_distance * r.min_distance;
  r.rhs = core + 2.0 * r.max_trace + std::exp(-D2 / (8.0 * r.max_trace));
  const double sigma_main = core + r.max_trace;
  r.rhs_main = sigma_main + std::exp(-D2 / (8.0 * sigma_main));
  r.separation_ok = r.min_distance > 4.0 * std::sqrt(core + r.max_trace);
  r.min_distance_ok = r.min_distance >= 2.0 * std::sqrt(static_cast<double>(task.state_dim));

  const std::size_t N = centers.size();
  std::vector<double> err_sum(N, 0.0);
  std::vector<std::size_t> counts(N, 0);
  const double quarter = r.min_distance / 4.0;
  std::size_t within = 0;
  double total = 0.0, total_sq = 0.0;
  for (Eigen::Index i = 0; i < samples.cols(); ++i) {
    const Eigen::VectorXd s = samples.col(i);
    const VoronoiHit hit = voronoi_project(s, centers);
    const double e = (s - hit.center).squaredNorm();
    err_sum[hit.index] += e;
    ++counts[hit.index];
    total += e;
    total_sq += e * e;
    if (std::sqrt(e) <= quarter) ++within;
  }
  const auto n = static_cast<double>(samples.cols());
  for (std::size_t j = 0; j < N; ++j) {
    r.mode_errors.push_back(counts[j] ? err_sum[j] / static_cast<double>(counts[j]) : 0.0);
    r.mode_coverage.push_back(static_cast<double>(counts[j]) / n);
  }
  r.nearest_mode_error = total / n;
  r.nearest_mode_error_se = samples.cols() > 1 ? std::sqrt(std::max(0.0, (total_sq - n * r.nearest_mode_error * r.nearest_mode_error) / (n - 1.0)) / n) : 0.0;
  r.within_quarter_fraction = static_cast<double>(within) / n;
  return r;
}

// Measured quantities next to the bounds they are checked against.
struct BoundReport {
  std::size_t n_samples = 0;
  std::size_t num_steps = 0;
  double c1 = 0.0;
  double delta_sq_hat = 0.0;
  double eps_kl_hat = 0.0;  // surrogate: KL(q_psi || p_phi) measured in training
  double var_true = 0.0;
  Theorem1Result thm1;
  PropagationResult lemma1;
  double lemma1_rhs = 0.0;      // C1 K delta^2 + C2 eps_KL
  double lemma1_rhs_k2 = 0.0;   // C1 K^2 delta^2 + C2 eps_KL
  Theorem2Result thm2;

  // Inequalities checked with a 3-standard-error allowance on measured sides.
  bool thm1_holds() const { return thm1.lhs <= thm1.rhs + 3.0 * thm1.lhs_se; }
  bool lemma1_propagation_holds() const { return lemma1.measured <= lemma1.bound + 3.0 * lemma1.measured_se; }
  bool lemma1_w2_holds() const { return thm1.w2_sq <= lemma1_rhs; }
  bool thm2_holds() const {
    if (!thm2.separation_ok) return true;  // bound not applicable
    return thm2.nearest_mode_error <= thm2.rhs + 3.0 * thm2.nearest_mode_error_se;
  }
  bool all_hold() const { return thm1_holds() && lemma1_propagation_holds() && thm2_holds(); }

  std::string csv_header() const {
    std::ostringstream os;
    os << "n_samples,K,c1,c2,delta_sq_hat,eps_kl_hat,var_true,"
          "w2_sq_hat,w2_samples,thm1_lhs,thm1_lhs_se,thm1_rhs,thm1_slack,"
          "lemma1_measured,lemma1_measured_se,lemma1_sum_a_sq_delta_sq,lemma1_reverse_chain,"
          "lemma1_c1k_delta_sq,lemma1_c1k2_delta_sq,lemma1_rhs,lemma1_rhs_k2,"
          "D,max_trace,nearest_mode_error,nearest_mode_error_se,within_quarter_fraction,"
          "thm2_rhs,thm2_rhs_main,separation_ok,min_distance_ok,"
          "thm1_holds,lemma1_holds,lemma1_w2_holds,thm2_holds";
    for (std::size_t j = 0; j < thm2.mode_errors.size(); ++j) os << ",mode_error_" << j << ",mode_coverage_" << j;
    return os.str();
  }

  std::string csv_row() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << n_samples << ',' << num_steps << ',' << c1 << ',' << thm2.c2 << ',' << delta_sq_hat << ',' << eps_kl_hat << ','
       << var_true << ',' << thm1.w2_sq << ',' << thm1.w2_samples << ',' << thm1.lhs << ',' << thm1.lhs_se << ','
       << thm1.rhs << ',' << thm1.slack << ',' << lemma1.measured << ',' << lemma1.measured_se << ','
       << lemma1.closed_form << ',' << lemma1.reverse_chain_closed_form << ',' << lemma1.bound << ','
       << lemma1.bound_k2 << ',' << lemma1_rhs << ',' << lemma1_rhs_k2 << ',' << thm2.min_distance << ','
       << thm2.max_trace << ',' << thm2.nearest_mode_error << ',' << thm2.nearest_mode_error_se << ','
       << thm2.within_quarter_fraction << ',' << thm2.rhs << ',' << thm2.rhs_main << ',' << thm2.separation_ok
       << ',' << thm2.min_distance_ok << ',' << thm1_holds() << ',' << lemma1_propagation_holds() << ','
       << lemma1_w2_holds() << ',' << thm2_holds();
    for (std::size_t j = 0; j < thm2.mode_errors.size(); ++j)
      os << ',' << thm2.mode_errors[j] << ',' << thm2.mode_coverage[j];
    return os.str();
  }

  std::string text() const {
    std::ostringstream os;
    os << std::setprecision(6);
    auto flag = [](bool b) { return b ? "holds" : "VIOLATED"; };
    os << "bound report (" << n_samples << " samples, K=" << num_steps << ")\n"
       << "  C1 = " << c1 << ", C2 = " << thm2.c2 << "\n"
       << "  delta^2 (training noise MSE) = " << delta_sq_hat << "\n"
       << "  eps_KL (surrogate KL(q||p))  = " << eps_kl_hat << "\n"
       << "single-sample error\n"
       << "  E||s_hat - s||^2 = " << thm1.lhs << " +- " << thm1.lhs_se << "\n"
       << "  2 W2^2 + 4 Var   = " << thm1.rhs << "  (W2^2 = " << thm1.w2_sq << " on " << thm1.w2_samples
       << " pts, Var = " << var_true << ")\n"
       << "  slack = " << thm1.slack << "  [" << flag(thm1_holds()) << "]\n"
       << "error propagation\n"
       << "  measured E||ds0||^2 = " << lemma1.measured << " +- " << lemma1.measured_se << "\n"
       << "  sum A_k^2 delta^2   = " << lemma1.closed_form << "\n"
       << "  reverse-chain form  = " << lemma1.reverse_chain_closed_form << "\n"
       << "  C1 K delta^2        = " << lemma1.bound << "  [" << flag(lemma1_propagation_holds()) << "]\n"
       << "  C1 K^2 delta^2      = " << lemma1.bound_k2 << "\n"
       << "  W2^2 vs C1 K delta^2 + C2 eps_KL = " << thm1.w2_sq << " vs " << lemma1_rhs
       << " (K^2 variant " << lemma1_rhs_k2 << ")  [" << (lemma1_w2_holds() ? "holds" : "exceeded") << ", informational]\n"
       << "multi-modal error\n"
       << "  D = " << thm2.min_distance << ", max tr Sigma = " << thm2.max_trace << "\n"
       << "  separation condition: " << (thm2.separation_ok ? "satisfied" : "NOT satisfied (bound inapplicable)")
       << "; D >= 2 sqrt(d): " << (thm2.min_distance_ok ? "yes" : "no") << "\n"
       << "  nearest-mode error = " << thm2.nearest_mode_error << " +- " << thm2.nearest_mode_error_se << "\n"
       << "  bound (2 max tr form) = " << thm2.rhs << ", bound (sigma_max form) = " << thm2.rhs_main << "  ["
       << flag(thm2_holds()) << "]\n"
       << "  within D/4 of a center: " << thm2.within_quarter_fraction << "\n";
    for (std::size_t j = 0; j < thm2.mode_errors.size(); ++j) {
      os << "  mode " << j << ": error " << thm2.mode_errors[j] << ", coverage " << thm2.mode_coverage[j] << "\n";
    }
    return os.str();
  }
};

inline BoundReport make_bound_report(const Theorem1Result& thm1, const PropagationResult& lemma1,
                                     const Theorem2Result& thm2, const DiffusionSchedule& sched, double delta_sq_hat,
                                     double eps_kl_hat, std::size_t n_samples) {
  BoundReport r;
  r.n_samples = n_samples;
  r.num_steps = static_cast<std::size_t>(sched.num_steps());
  r.c1 = sched.c1();
  r.delta_sq_hat = delta_sq_hat;
  r.eps_kl_hat = eps_kl_hat;
  r.var_true = thm1.var_true;
  r.thm1 = thm1;
  r.lemma1 = lemma1;
  r.thm2 = thm2;
  const double K = static_cast<double>(sched.num_steps());
  r.lemma1_rhs = sched.c1() * K * delta_sq_hat + thm2.c2 * eps_kl_hat;
  r.lemma1_rhs_k2 = sched.c1() * K * K * delta_sq_hat + thm2.c2 * eps_kl_hat;
  return r;
}

}  // namespace globediff
