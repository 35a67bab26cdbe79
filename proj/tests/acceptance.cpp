// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "globediff/commands.hpp"

using namespace globediff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("globediff_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig reference_config(const std::string& file) {
  return load_config((fs::path(GLOBEDIFF_CONFIG_DIR) / file).string());
}

// 1. Analytic gradients of the networks and of the full training loss.
Outcome gradients() {
  const auto t0 = Clock::now();
  const TinyModelSpec spec{2, 2, 2, 2, 4, 3};
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RandomStream rng(seed, "acceptance-gradients");
    for (Activation act : {Activation::relu, Activation::mish}) {
      Network net = init_network({spec.cond, spec.hidden, spec.hidden, spec.state}, act, seed, true);
      for (std::size_t l = 0; l < net.num_layers(); ++l)
        for (Eigen::Index i = 0; i < net.bias(l).size(); ++i) net.bias(l)[i] = rng.uniform(-0.5, 0.5);
      Eigen::MatrixXd x(2, 3), w(2, 3);
      for (Eigen::Index i = 0; i < 6; ++i) {
        x.data()[i] = rng.normal();
        w.data()[i] = rng.normal();
      }
      const GradcheckResult r = check_network_gradients(net, x, w);
      worst = std::max(worst, r.max_rel_error);
      checked += r.checked;
    }
    const TinyProblem p = make_tiny_problem(spec, seed);
    const GradcheckResult r = check_loss_gradients(p.model, p.x, p.s, p.draws);
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 10.0,
          fmt("max relative error %.3g over %zu entries (< 1e-5), %.2f s (< 10 s)", worst, checked, secs)};
}

// 2. Error propagation through the default schedule.
Outcome propagation() {
  const auto t0 = Clock::now();
  const DiffusionSchedule sched(ScheduleSpec{});
  const PropagationResult r = error_propagation_mc(sched, 0.1, 1, 100000, 2024);
  const double secs = seconds_since(t0);
  const double z = (r.measured - r.closed_form) / r.measured_se;
  const bool ok = std::abs(z) <= 3.0 && r.measured < r.bound && secs < 30.0;
  return {ok, fmt("measured %.6g +- %.2g vs sum A_k^2 delta^2 %.6g (z = %.2f), bound C1 K delta^2 %.6g, %.2f s",
                  r.measured, r.measured_se, r.closed_form, z, r.bound, secs)};
}

// 3. Single-sample bound with analytic Gaussians. The spread of each
// measured quantity at 1e5 samples is estimated from independent replicates.
Outcome single_sample_bound() {
  const Eigen::Index n = 100000;
  const int replicates = 12;
  bool ok = true;
  std::ostringstream detail;
  for (double mu : {0.0, 1.0, 3.0}) {
    std::vector<double> lhs, rhs, slack;
    for (int rep = 0; rep < replicates; ++rep) {
      RandomStream rng(static_cast<std::uint64_t>(rep), "acceptance-thm1", static_cast<std::uint64_t>(mu * 10));
      Eigen::MatrixXd model(1, n), truth(1, n);
      for (Eigen::Index i = 0; i < n; ++i) model(0, i) = mu + rng.normal();
      for (Eigen::Index i = 0; i < n; ++i) truth(0, i) = rng.normal();
      const Theorem1Result r = evaluate_theorem1(model, truth, 1.0);
      lhs.push_back(r.lhs);
      rhs.push_back(r.rhs);
      slack.push_back(r.slack);
    }
    auto sd = [](const std::vector<double>& v) {
      const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double s = 0.0;
      for (double x : v) s += (x - m) * (x - m);
      return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    const double want_lhs = mu * mu + 2.0, want_rhs = 2.0 * mu * mu + 4.0, want_slack = mu * mu + 2.0;
    // The first replicate is the measurement; the rest give its spread.
    const bool holds = lhs[0] <= rhs[0];
    const bool lhs_ok = std::abs(lhs[0] - want_lhs) <= 3.0 * sd(lhs);
    const bool rhs_ok = std::abs(rhs[0] - want_rhs) <= 3.0 * sd(rhs);
    const bool slack_ok = std::abs(slack[0] - want_slack) <= 3.0 * sd(slack);
    ok = ok && holds && lhs_ok && rhs_ok && slack_ok;
    detail << fmt("mu=%g: lhs %.4f (%.0f), rhs %.4f (%.0f), slack %.4f +- %.3f; ", mu, lhs[0], want_lhs, rhs[0],
                  want_rhs, slack[0], sd(slack));
  }
  return {ok, detail.str()};
}

// 4. Multi-modality on the reference bimodal task, including the
// mode-averaging regressor baseline.
Outcome multimodality() {
  const auto t0 = Clock::now();
  const RunConfig cfg = reference_config("bimodal.cfg");
  const Dataset data = generate_dataset(cfg.data_source(), cfg.n_pairs, cfg.seed);
  const TrainResult trained = train(make_model(cfg.model_spec()), data, cfg.train_config());
  const BoundReport rep = cli::build_bound_report(trained.model, cfg);
  const Theorem2Result& t2 = rep.thm2;

  TrainConfig reg_cfg = cfg.train_config();
  reg_cfg.epochs = 30;
  const Network regressor = train_regressor(data, {64, 64}, reg_cfg);
  const double pred = forward(regressor, cfg.eval_condition())[0];
  const auto centers = cfg.gmm_task().mode_means(cfg.eval_condition());
  double reg_err = std::numeric_limits<double>::infinity();
  for (const auto& c : centers) reg_err = std::min(reg_err, (c[0] - pred) * (c[0] - pred));
  const double secs = seconds_since(t0);

  bool modes_ok = true;
  for (std::size_t j = 0; j < t2.mode_errors.size(); ++j)
    modes_ok = modes_ok && t2.mode_errors[j] < 0.25 && t2.mode_coverage[j] > 0.1;
  const bool ok = t2.within_quarter_fraction >= 0.9 && modes_ok && t2.separation_ok && std::abs(pred) <= 0.2 &&
                  secs < 600.0;
  return {ok, fmt("within D/4 %.3f (>= 0.9), mode errors %.4f/%.4f coverage %.3f/%.3f (< 0.25), separation %s; "
                  "regressor at x=0 %.4f (|.| <= 0.2), its mode error %.3f; %.0f s (< 600 s)",
                  t2.within_quarter_fraction, t2.mode_errors[0], t2.mode_errors[1], t2.mode_coverage[0],
                  t2.mode_coverage[1], t2.separation_ok ? "true" : "false", pred, reg_err, secs)};
}

// 5. Unimodal fidelity at five conditions.
Outcome unimodal() {
  const RunConfig cfg = reference_config("unimodal.cfg");
  const Dataset data = generate_dataset(cfg.data_source(), cfg.n_pairs, cfg.seed);
  const TrainResult trained = train(make_model(cfg.model_spec()), data, cfg.train_config());
  const ConditionalGMM task = cfg.gmm_task();
  bool ok = true;
  double worst_mean = 0.0, worst_w2 = 0.0;
  const std::size_t n = 1000;
  for (double xv : {-0.8, -0.4, 0.0, 0.4, 0.8}) {
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, xv);
    const Eigen::MatrixXd s = sample(trained.model, x, n, derive_seed(cfg.seed, "acceptance-unimodal", static_cast<std::uint64_t>((xv + 1) * 10)));
    Eigen::MatrixXd truth(1, static_cast<Eigen::Index>(n));
    RandomStream rng(cfg.seed, "acceptance-unimodal-truth", static_cast<std::uint64_t>((xv + 1) * 10));
    for (Eigen::Index i = 0; i < truth.cols(); ++i) truth.col(i) = gmm_sample(task, x, rng);
    const double mean_err = std::abs(s.mean() - xv);
    const double w2 = w2_1d(Eigen::RowVectorXd(s.row(0)), Eigen::RowVectorXd(truth.row(0)));
    worst_mean = std::max(worst_mean, mean_err);
    worst_w2 = std::max(worst_w2, w2);
    ok = ok && mean_err < 0.1 && w2 < 0.15;
  }
  return {ok, fmt("worst |mean - x| %.4f (< 0.1), worst W2 %.4f (< 0.15) over x in {-0.8,-0.4,0,0.4,0.8}",
                  worst_mean, worst_w2)};
}

// 6. W2 estimators against analytic and brute-force references.
Outcome w2_calibration() {
  RandomStream rng(6, "acceptance-w2");
  const Eigen::Index n = 100000;
  Eigen::RowVectorXd a(n), b(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = rng.normal();
  for (Eigen::Index i = 0; i < n; ++i) b[i] = 3.0 + rng.normal();
  const double w = w2_1d(a, b);
  int exact = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = static_cast<Eigen::Index>(rng.integer(3, 6));
    const auto d = static_cast<Eigen::Index>(rng.integer(1, 3));
    Eigen::MatrixXd p(d, m), q(d, m);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (std::size_t i = 0; i < perm.size(); ++i) c += (p.col(static_cast<Eigen::Index>(i)) - q.col(perm[i])).squaredNorm();
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    exact += w2_matching(p, q) == std::sqrt(best / static_cast<double>(m));
  }
  return {std::abs(w - 3.0) <= 0.05 && exact == 50,
          fmt("W2(N(0,1), N(3,1)) = %.4f (|. - 3| <= 0.05); matching equals brute force on %d/50", w, exact)};
}

// 7. Byte-identical outputs from two full CLI pipeline runs.
Outcome determinism() {
  const fs::path root = scratch("determinism");
  {
    std::ofstream cfg(root / "run.cfg");
    cfg << "seed = 77\ntask.n_pairs = 1000\nschedule.beta_lo = 0.05\nschedule.beta_hi = 0.3\n"
           "model.denoiser_hidden = 32,32\ntrain.epochs = 3\ntrain.eval_interval = 1\n";
    std::ofstream(root / "x.jsonl") << "[-0.5]\n[0.0]\n[0.5]\n";
  }
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(GLOBEDIFF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  bool ran = true;
  for (const char* tag : {"a", "b"}) {
    const std::string t = (root / tag).string();
    const std::string cfg = (root / "run.cfg").string();
    ran = ran && run("gen-data --config " + cfg + " --out " + t + ".data.jsonl");
    ran = ran && run("train --config " + cfg + " --data " + t + ".data.jsonl --out " + t + ".ckpt");
    ran = ran && run("sample --checkpoint " + t + ".ckpt --x " + (root / "x.jsonl").string() +
                     " --n 200 --seed 77 --out " + t + ".samples.jsonl");
  }
  if (!ran) return {false, "pipeline command failed"};
  int same = 0;
  std::string sizes;
  for (const char* ext : {".data.jsonl", ".ckpt", ".ckpt.history.csv", ".samples.jsonl"}) {
    const std::string a = read_file_bytes((root / (std::string("a") + ext)).string());
    const std::string b = read_file_bytes((root / (std::string("b") + ext)).string());
    same += a == b && !a.empty();
    sizes += fmt("%s %zu B; ", ext, a.size());
  }
  fs::remove_all(root);
  return {same == 4, fmt("%d/4 artifacts byte-identical (", same) + sizes + ")"};
}

// 8. Auxiliary-observation construction and grid-world masking.
Outcome aux_construction() {
  const auto t0 = Clock::now();
  bool ok = true;
  const RunConfig defaults;
  ok = ok && defaults.grid.history == 3 && GridSpec{}.history == 3;

  // Window stacking with zero padding, m = 3.
  RandomStream rng(8, "acceptance-aux");
  std::vector<Eigen::VectorXd> obs;
  for (int t = 0; t < 10; ++t) obs.push_back(rng.normal_vector(5));
  for (std::size_t t = 0; t < obs.size(); ++t) {
    const Eigen::VectorXd x = build_history_aux(obs, t, 3);
    ok = ok && x.size() == 20;
    for (std::size_t slot = 0; slot < 4; ++slot) {
      const auto step = static_cast<long>(t) - 3 + static_cast<long>(slot);
      const Eigen::VectorXd block = x.segment(static_cast<Eigen::Index>(slot) * 5, 5);
      ok = ok && (step < 0 ? block.isZero(0.0) : block == obs[static_cast<std::size_t>(step)]);
    }
  }
  // Joint concatenation in agent order; permuting agents changes x.
  const Eigen::VectorXd joint = build_joint_aux({obs[0], obs[1], obs[2]});
  ok = ok && joint.head(5) == obs[0] && joint.segment(5, 5) == obs[1] && joint.tail(5) == obs[2];
  ok = ok && joint != build_joint_aux({obs[1], obs[0], obs[2]});

  // Exhaustive masking on 5x5 grids: every observer cell x every other-agent
  // cell x every landmark cell, for each sight radius.
  std::size_t checked = 0;
  GridSpec spec;
  spec.agents = 2;
  spec.landmarks = 1;
  for (spec.sight = 0; spec.sight <= 4; ++spec.sight) {
    for (int a = 0; a < 25; ++a)
      for (int b = 0; b < 25; ++b)
        for (int l = 0; l < 25; ++l) {
          const GridState st{{{a / 5, a % 5}, {b / 5, b % 5}}, {{l / 5, l % 5}}, 0};
          const Eigen::VectorXd o = observe(spec, st, 0);
          for (int c = 0; c < 25; ++c) {
            const Cell cell{c / 5, c % 5};
            const bool visible = chebyshev(st.agents[0], cell) <= spec.sight;
            ok = ok && o[2 + 2 * c + 1] == (visible ? 1.0 : 0.0) && o[2 + 2 * c] == (visible ? cell_value(st, cell) : 0.0);
            ++checked;
          }
        }
  }
  // First pair of a history-mode grid episode is three zero blocks then o_0.
  const Dataset grid = generate_dataset(GridSpec{}, 1, 0);
  const auto od = static_cast<Eigen::Index>(observation_dim(GridSpec{}));
  ok = ok && grid.x.col(0).head(3 * od).isZero(0.0) && !grid.x.col(0).tail(od).isZero(0.0);

  const double secs = seconds_since(t0);
  ok = ok && secs < 5.0;
  return {ok, fmt("window m=3 with padding, joint ordering, %zu masked cells checked, %.2f s (< 5 s)", checked, secs)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradients},
      {"error propagation", propagation},
      {"single-sample bound", single_sample_bound},
      {"multi-modality end-to-end", multimodality},
      {"unimodal fidelity", unimodal},
      {"W2 estimator calibration", w2_calibration},
      {"determinism", determinism},
      {"auxiliary observation construction", aux_construction},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << i + 1 << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
