#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "model.hpp"
#include "netcore.hpp"
#include "rng.hpp"

namespace globediff {

// Finite-difference checks of analytic gradients. Relative error per entry
// is |analytic - numeric| / max(|analytic|, |numeric|, floor); the floor
// keeps entries that are zero up to rounding from dominating.
struct GradcheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kRelativeErrorFloor = 1e-4;

inline double relative_error(double analytic, double numeric, double floor = kRelativeErrorFloor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline void accumulate(GradcheckResult& r, double analytic, double numeric) {
  r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
  r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic - numeric));
  ++r.checked;
}

// Central differences of `loss` with respect to every entry of `params`.
inline std::vector<double> numeric_gradient(std::vector<double>& params, const std::function<double()>& loss,
                                            double h = kFiniteDifferenceStep) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Checks backward() on <w, forward(net, x)> for a fixed random weighting w,
// both parameter and input gradients.
inline GradcheckResult check_network_gradients(Network net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  GradcheckResult r;
  const Gradients g = backward(net, forward_cached(net, x), w);
  auto loss = [&] { return forward(net, x).cwiseProduct(w).sum(); };
  const auto num = numeric_gradient(net.params, loss);
  for (std::size_t i = 0; i < num.size(); ++i) accumulate(r, g.params[i], num[i]);
  Eigen::MatrixXd xv = x;
  std::vector<double> flat(xv.data(), xv.data() + xv.size());
  auto input_loss = [&] {
    const Eigen::Map<const Eigen::MatrixXd> xm(flat.data(), x.rows(), x.cols());
    return forward(net, Eigen::MatrixXd(xm)).cwiseProduct(w).sum();
  };
  const auto num_x = numeric_gradient(flat, input_loss);
  for (std::size_t i = 0; i < num_x.size(); ++i) accumulate(r, g.input.data()[i], num_x[i]);
  return r;
}

// Checks d(training_loss)/d(theta, phi, psi) for fixed noise draws.
inline GradcheckResult check_loss_gradients(GlobeDiffModel model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& s,
                                            const NoiseDraws& draws) {
  GradcheckResult r;
  ModelGradients g;
  training_loss(model, x, s, draws, &g);
  auto loss = [&] { return training_loss(model, x, s, draws).total; };
  const auto check = [&](std::vector<double>& params, const std::vector<double>& analytic) {
    const auto num = numeric_gradient(params, loss);
    for (std::size_t i = 0; i < num.size(); ++i) accumulate(r, analytic[i], num[i]);
  };
  check(model.denoiser.params, g.denoiser);
  check(model.prior.net.params, g.prior);
  check(model.posterior.net.params, g.posterior);
  return r;
}

struct TinyModelSpec {
  std::size_t state = 2;
  std::size_t cond = 2;
  std::size_t latent = 2;
  int num_steps = 2;
  std::size_t hidden = 4;
  std::size_t batch = 3;
};

// Random tiny model, batch and noise for gradient checks. Heads get random
// biases so no unit sits exactly at a ReLU kink.
struct TinyProblem {
  GlobeDiffModel model;
  Eigen::MatrixXd x;
  Eigen::MatrixXd s;
  NoiseDraws draws;
};

inline TinyProblem make_tiny_problem(const TinyModelSpec& spec, std::uint64_t seed) {
  ModelSpec ms;
  ms.dims = {spec.state, spec.cond, spec.latent};
  ms.schedule = ScheduleSpec{ScheduleKind::linear, spec.num_steps, 0.05, 0.3};
  ms.denoiser_hidden = {spec.hidden, spec.hidden};
  ms.head_hidden = {spec.hidden};
  ms.beta_kl = 0.5;
  ms.seed = seed;
  TinyProblem p{make_model(ms), {}, {}, {}};
  RandomStream rng(seed, "tiny-problem");
  for (auto* net : {&p.model.denoiser, &p.model.prior.net, &p.model.posterior.net}) {
    for (std::size_t l = 0; l < net->num_layers(); ++l) {
      auto b = net->bias(l);
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-0.5, 0.5);
    }
  }
  const auto B = static_cast<Eigen::Index>(spec.batch);
  p.x = Eigen::MatrixXd(static_cast<Eigen::Index>(spec.cond), B);
  p.s = Eigen::MatrixXd(static_cast<Eigen::Index>(spec.state), B);
  for (Eigen::Index i = 0; i < p.x.size(); ++i) p.x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < p.s.size(); ++i) p.s.data()[i] = rng.normal();
  p.draws = draw_noise(p.model, spec.batch, rng);
  return p;
}

}  // namespace globediff
