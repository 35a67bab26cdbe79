#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dataset.hpp"
#include "error.hpp"
#include "latent.hpp"
#include "netcore.hpp"
#include "rng.hpp"
#include "schedule.hpp"

namespace globediff {

inline constexpr std::size_t kTimeEmbedDim = 8;

// Sinusoidal code for the step index: [sin(k f_i), cos(k f_i)] for
// f_i = 100^(-i/4), i = 0..3.
inline Eigen::VectorXd timestep_embedding(int k) {
  Eigen::VectorXd e(kTimeEmbedDim);
  constexpr std::size_t half = kTimeEmbedDim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(100.0, -static_cast<double>(i) / static_cast<double>(half));
    e[static_cast<Eigen::Index>(i)] = std::sin(k * freq);
    e[static_cast<Eigen::Index>(half + i)] = std::cos(k * freq);
  }
  return e;
}

struct ModelDims {
  std::size_t state = 1;   // d
  std::size_t cond = 1;    // d_x
  std::size_t latent = 16; // d_z

  bool operator==(const ModelDims&) const = default;
};

struct ModelSpec {
  ModelDims dims;
  ScheduleSpec schedule;
  std::vector<std::size_t> denoiser_hidden{128, 128, 128};
  std::vector<std::size_t> head_hidden{64, 64};
  double beta_kl = 0.1;
  std::uint64_t seed = 0;
};

// Denoiser eps_theta over [s^k; x; z; embed(k)], prior p_phi(z|x) and
// posterior q_psi(z|x,s), plus the noise schedule they share.
struct GlobeDiffModel {
  ModelDims dims;
  DiffusionSchedule sched{ScheduleSpec{}};
  Network denoiser;
  GaussianHead prior;
  GaussianHead posterior;
  double beta_kl = 0.1;
  double delta_sq_hat = 0.0;  // final noise-prediction MSE from training
  double eps_kl_hat = 0.0;    // final KL(q || p) from training

  // Incremented on every posterior evaluation. Sampling must leave it alone.
  mutable std::uint64_t posterior_evaluations = 0;

  std::size_t denoiser_input_dim() const { return dims.state + dims.cond + dims.latent + kTimeEmbedDim; }

  void validate() const {
    expect_dim("denoiser input", denoiser_input_dim(), denoiser.input_dim());
    expect_dim("denoiser output", dims.state, denoiser.output_dim());
    expect_dim("prior input", dims.cond, prior.input_dim());
    expect_dim("posterior input", dims.cond + dims.state, posterior.input_dim());
    expect_dim("prior latent", dims.latent, prior.latent_dim);
    expect_dim("posterior latent", dims.latent, posterior.latent_dim);
  }
};

inline GlobeDiffModel make_model(const ModelSpec& spec) {
  if (spec.dims.state == 0 || spec.dims.cond == 0 || spec.dims.latent == 0) {
    throw InvalidArgument("model dims must be positive");
  }
  if (spec.beta_kl < 0.0) throw InvalidArgument("beta_kl must be >= 0");
  GlobeDiffModel m;
  m.dims = spec.dims;
  m.sched = DiffusionSchedule(spec.schedule);
  std::vector<std::size_t> den{m.denoiser_input_dim()};
  den.insert(den.end(), spec.denoiser_hidden.begin(), spec.denoiser_hidden.end());
  den.push_back(spec.dims.state);
  m.denoiser = init_network(std::move(den), Activation::mish, derive_seed(spec.seed, "denoiser"), true);
  m.prior = make_gaussian_head(spec.dims.cond, spec.head_hidden, spec.dims.latent, derive_seed(spec.seed, "prior"));
  m.posterior = make_gaussian_head(spec.dims.cond + spec.dims.state, spec.head_hidden, spec.dims.latent,
                                   derive_seed(spec.seed, "posterior"));
  m.beta_kl = spec.beta_kl;
  return m;
}

struct LossTerms {
  double total = 0.0;
  double mse = 0.0;
  double kl = 0.0;
};

struct ModelGradients {
  std::vector<double> denoiser;
  std::vector<double> prior;
  std::vector<double> posterior;
};

// Caller-supplied randomness for one batch of the training objective.
struct NoiseDraws {
  Eigen::MatrixXd eps;    // d x B, forward-process noise
  Eigen::MatrixXd z_eps;  // d_z x B, reparameterization noise
  std::vector<int> steps; // B step indices in [1, K]
};

inline NoiseDraws draw_noise(const GlobeDiffModel& m, std::size_t batch, RandomStream& rng) {
  NoiseDraws d;
  const auto B = static_cast<Eigen::Index>(batch);
  d.eps.resize(static_cast<Eigen::Index>(m.dims.state), B);
  d.z_eps.resize(static_cast<Eigen::Index>(m.dims.latent), B);
  d.steps.resize(batch);
  for (Eigen::Index b = 0; b < B; ++b) {
    d.steps[static_cast<std::size_t>(b)] = static_cast<int>(rng.integer(1, m.sched.num_steps()));
    for (Eigen::Index i = 0; i < d.eps.rows(); ++i) d.eps(i, b) = rng.normal();
    for (Eigen::Index i = 0; i < d.z_eps.rows(); ++i) d.z_eps(i, b) = rng.normal();
  }
  return d;
}

// Noise-prediction MSE plus beta_kl * KL(q_psi(z|x,s) || p_phi(z|x)), both
// averaged over the batch. Fills `grads` with d total / d params when given.
inline LossTerms training_loss(const GlobeDiffModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& s,
                               const NoiseDraws& draws, ModelGradients* grads = nullptr) {
  const Eigen::Index B = x.cols();
  if (B == 0) throw InvalidArgument("training_loss: empty batch");
  expect_dim("training_loss x", m.dims.cond, static_cast<std::size_t>(x.rows()));
  expect_dim("training_loss s", m.dims.state, static_cast<std::size_t>(s.rows()));
  expect_dim("training_loss batch", static_cast<std::size_t>(B), static_cast<std::size_t>(s.cols()));
  expect_dim("training_loss eps", static_cast<std::size_t>(s.size()), static_cast<std::size_t>(draws.eps.size()));
  expect_dim("training_loss z_eps", m.dims.latent * static_cast<std::size_t>(B),
             static_cast<std::size_t>(draws.z_eps.size()));
  expect_dim("training_loss steps", static_cast<std::size_t>(B), draws.steps.size());

  const auto d = static_cast<Eigen::Index>(m.dims.state);
  const auto dx = static_cast<Eigen::Index>(m.dims.cond);
  const auto dz = static_cast<Eigen::Index>(m.dims.latent);

  Eigen::MatrixXd post_in(dx + d, B);
  post_in << x, s;
  ++m.posterior_evaluations;
  const HeadPass q = head_forward_batch(m.posterior, post_in);
  const HeadPass p = head_forward_batch(m.prior, x);
  const Eigen::MatrixXd z = reparameterize(q.params.mu, q.params.logvar, draws.z_eps);

  Eigen::MatrixXd den_in(m.denoiser_input_dim(), B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const int k = draws.steps[static_cast<std::size_t>(b)];
    const double abar = m.sched.alpha_bar(k);
    den_in.col(b).head(d) = std::sqrt(abar) * s.col(b) + std::sqrt(1.0 - abar) * draws.eps.col(b);
    den_in.col(b).segment(d, dx) = x.col(b);
    den_in.col(b).segment(d + dx, dz) = z.col(b);
    den_in.col(b).tail(kTimeEmbedDim) = timestep_embedding(k);
  }
  const ForwardCache dc = forward_cached(m.denoiser, den_in);
  const Eigen::MatrixXd resid = dc.output - draws.eps;

  LossTerms out;
  out.mse = resid.squaredNorm() / static_cast<double>(B);
  out.kl = kl_diag_gaussians_batch(q.params.mu, q.params.logvar, p.params.mu, p.params.logvar).mean();
  out.total = out.mse + m.beta_kl * out.kl;

  if (grads != nullptr) {
    const Gradients gd = backward(m.denoiser, dc, (2.0 / static_cast<double>(B)) * resid);
    grads->denoiser = gd.params;
    const Eigen::MatrixXd grad_z = gd.input.middleRows(d + dx, dz);
    const KlGradients gk = kl_diag_gaussians_grad(q.params.mu, q.params.logvar, p.params.mu, p.params.logvar,
                                                  m.beta_kl / static_cast<double>(B));
    const Eigen::MatrixXd sigma_q = (0.5 * q.params.logvar.array()).exp().matrix();
    const Eigen::MatrixXd grad_mu_q = gk.mu_q + grad_z;
    const Eigen::MatrixXd grad_lv_q =
        gk.logvar_q + (grad_z.array() * draws.z_eps.array() * sigma_q.array() * 0.5).matrix();
    grads->posterior = head_backward(m.posterior, q, grad_mu_q, grad_lv_q).params;
    grads->prior = head_backward(m.prior, p, gk.mu_p, gk.logvar_p).params;
  }
  return out;
}

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  double lr = 2e-4;
  double weight_decay = 1e-4;
  double beta_kl = 0.1;
  std::uint64_t seed = 0;
  std::size_t eval_interval = 10;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainRecord {
  std::size_t epoch = 0;
  double mse = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double delta_sq_hat = 0.0;
};

using TrainHistory = std::vector<TrainRecord>;

struct TrainResult {
  GlobeDiffModel model;
  TrainHistory history;
};

using TrainObserver = std::function<void(const GlobeDiffModel&, const TrainRecord&)>;

namespace detail {

inline void check_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw InvalidArgument("train: batch_size must be >= 1");
  if (cfg.beta_kl < 0.0) throw InvalidArgument("train: beta_kl must be >= 0");
  if (cfg.eval_interval == 0) throw InvalidArgument("train: eval_interval must be >= 1");
}

inline bool record_epoch(std::size_t epoch, const TrainConfig& cfg) {
  return epoch == 0 || (epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == cfg.epochs;
}

inline std::vector<Eigen::Index> shuffled_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  RandomStream rng(seed, "shuffle", epoch);
  std::shuffle(order.begin(), order.end(), rng.engine());
  return order;
}

inline void gather(const Eigen::MatrixXd& src, std::span<const Eigen::Index> idx, Eigen::MatrixXd& dst) {
  dst.resize(src.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) dst.col(static_cast<Eigen::Index>(j)) = src.col(idx[j]);
}

}  // namespace detail

// Joint mini-batch optimization of denoiser, prior and posterior.
inline TrainResult train(GlobeDiffModel model, const Dataset& data, const TrainConfig& cfg,
                         const TrainObserver& observer = {}) {
  detail::check_train_config(cfg);
  if (data.empty()) throw InvalidArgument("train: empty dataset");
  expect_dim("train dataset x", model.dims.cond, data.cond_dim());
  expect_dim("train dataset s", model.dims.state, data.state_dim());
  model.validate();
  model.beta_kl = cfg.beta_kl;

  OptimizerState opt_den = make_optimizer(model.denoiser, cfg.lr, cfg.weight_decay);
  OptimizerState opt_prior = make_optimizer(model.prior.net, cfg.lr, cfg.weight_decay);
  OptimizerState opt_post = make_optimizer(model.posterior.net, cfg.lr, cfg.weight_decay);

  TrainHistory history;
  const std::size_t n = data.size();
  std::uint64_t global_step = 0;
  Eigen::MatrixXd xb, sb;
  ModelGradients grads;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::shuffled_order(n, cfg.seed, epoch);
    LossTerms sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      const std::span<const Eigen::Index> idx(order.data() + start, len);
      detail::gather(data.x, idx, xb);
      detail::gather(data.s, idx, sb);
      RandomStream rng(cfg.seed, "train-step", global_step++);
      const NoiseDraws draws = draw_noise(model, len, rng);
      const LossTerms loss = training_loss(model, xb, sb, draws, &grads);
      if (!std::isfinite(loss.total)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(global_step - 1) + " (mse=" + std::to_string(loss.mse) +
                             ", kl=" + std::to_string(loss.kl) + ")");
      }
      optimizer_step(opt_den, model.denoiser, grads.denoiser);
      optimizer_step(opt_prior, model.prior.net, grads.prior);
      optimizer_step(opt_post, model.posterior.net, grads.posterior);
      sum.total += loss.total;
      sum.mse += loss.mse;
      sum.kl += loss.kl;
      ++batches;
    }
    if (detail::record_epoch(epoch, cfg)) {
      const double nb = static_cast<double>(batches);
      TrainRecord rec{epoch, sum.mse / nb, sum.kl / nb, sum.total / nb, sum.mse / nb};
      model.delta_sq_hat = rec.mse;
      model.eps_kl_hat = rec.kl;
      history.push_back(rec);
      if (observer) observer(model, rec);
    }
  }
  return {std::move(model), std::move(history)};
}

using StepObserver = std::function<void(int)>;

// Draws n states for condition x. Sample i uses its own stream
// (seed, "sample", i): z noise, then s^K, then reverse noise for k = K..2.
// Only the prior head is consulted.
inline Eigen::MatrixXd sample(const GlobeDiffModel& m, const Eigen::VectorXd& x, std::size_t n, std::uint64_t seed,
                              const StepObserver& on_step = {}) {
  expect_dim("sample condition", m.dims.cond, static_cast<std::size_t>(x.size()));
  const auto d = static_cast<Eigen::Index>(m.dims.state);
  const auto dx = static_cast<Eigen::Index>(m.dims.cond);
  const auto dz = static_cast<Eigen::Index>(m.dims.latent);
  const auto N = static_cast<Eigen::Index>(n);
  const int K = m.sched.num_steps();
  if (n == 0) return Eigen::MatrixXd(d, 0);

  Eigen::MatrixXd z_eps(dz, N), states(d, N);
  std::vector<Eigen::MatrixXd> noise(static_cast<std::size_t>(K + 1), Eigen::MatrixXd::Zero(d, N));
  for (Eigen::Index i = 0; i < N; ++i) {
    RandomStream rng(seed, "sample", static_cast<std::uint64_t>(i));
    for (Eigen::Index j = 0; j < dz; ++j) z_eps(j, i) = rng.normal();
    for (Eigen::Index j = 0; j < d; ++j) states(j, i) = rng.normal();
    for (int k = K; k >= 2; --k)
      for (Eigen::Index j = 0; j < d; ++j) noise[static_cast<std::size_t>(k)](j, i) = rng.normal();
  }

  const GaussianVec prior = head_forward(m.prior, x);
  Eigen::MatrixXd z = (prior.logvar.array() * 0.5).exp().matrix().asDiagonal() * z_eps;
  z.colwise() += prior.mu;

  Eigen::MatrixXd den_in(m.denoiser_input_dim(), N);
  den_in.middleRows(d, dx) = x.replicate(1, N);
  den_in.middleRows(d + dx, dz) = z;
  for (int k = K; k >= 1; --k) {
    if (on_step) on_step(k);
    den_in.topRows(d) = states;
    den_in.bottomRows(kTimeEmbedDim) = timestep_embedding(k).replicate(1, N);
    const Eigen::MatrixXd eps_pred = forward(m.denoiser, den_in);
    const double beta = m.sched.beta(k);
    const double abar = m.sched.alpha_bar(k);
    states = (states - (beta / std::sqrt(1.0 - abar)) * eps_pred) / std::sqrt(m.sched.alpha(k));
    if (k > 1) states += std::sqrt(beta) * noise[static_cast<std::size_t>(k)];
  }
  return states;
}

// Plain least-squares regressor x -> s, the mode-averaging baseline.
inline Network train_regressor(const Dataset& data, const std::vector<std::size_t>& hidden, const TrainConfig& cfg) {
  detail::check_train_config(cfg);
  if (data.empty()) throw InvalidArgument("train_regressor: empty dataset");
  std::vector<std::size_t> dims{data.cond_dim()};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(data.state_dim());
  Network net = init_network(std::move(dims), Activation::relu, derive_seed(cfg.seed, "regressor"));
  OptimizerState opt = make_optimizer(net, cfg.lr, cfg.weight_decay);
  const std::size_t n = data.size();
  Eigen::MatrixXd xb, sb;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::shuffled_order(n, derive_seed(cfg.seed, "regressor"), epoch);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      const std::span<const Eigen::Index> idx(order.data() + start, len);
      detail::gather(data.x, idx, xb);
      detail::gather(data.s, idx, sb);
      const ForwardCache cache = forward_cached(net, xb);
      const Eigen::MatrixXd resid = cache.output - sb;
      const double loss = resid.squaredNorm() / static_cast<double>(len);
      if (!std::isfinite(loss)) throw NumericalError("train_regressor: non-finite loss at epoch " + std::to_string(epoch));
      const Gradients g = backward(net, cache, (2.0 / static_cast<double>(len)) * resid);
      optimizer_step(opt, net, g.params);
    }
  }
  return net;
}

}  // namespace globediff
