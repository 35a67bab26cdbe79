#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "gradcheck.hpp"
#include "model.hpp"
#include "synth.hpp"

// Command implementations behind the globediff CLI. Each returns the process
// exit code; run_guarded() maps exceptions onto the documented codes.
namespace globediff::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,            // bad arguments, config, files
  kExitNumerical = 2,        // non-finite values, failed gradient check
  kExitBoundViolation = 3,   // verify-bounds found LHS > RHS
};

inline int run_guarded(const std::function<int()>& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

inline int cmd_gen_data(const RunConfig& cfg, const std::string& out_path, std::ostream& log) {
  Dataset data = generate_dataset(cfg.data_source(), cfg.n_pairs, cfg.seed);
  write_dataset(data, out_path);
  log << "wrote " << data.size() << " pairs (d=" << data.state_dim() << ", d_x=" << data.cond_dim() << ") to "
      << out_path << '\n';
  return kExitOk;
}

inline void write_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "epoch,mse,kl,total\n" << std::setprecision(17);
  for (const auto& r : history) out << r.epoch << ',' << r.mse << ',' << r.kl << ',' << r.total << '\n';
}

// Trains from the dataset file and writes the checkpoint. The checkpoint is
// rewritten at every recorded interval, so a numerical abort leaves the last
// good one on disk.
inline int cmd_train(const RunConfig& cfg, const std::string& data_path, const std::string& ckpt_path,
                     const std::string& history_path, std::ostream& log) {
  const Dataset data = read_dataset(data_path);
  const ModelSpec spec = cfg.model_spec();
  if (data.state_dim() != spec.dims.state || data.cond_dim() != spec.dims.cond) {
    throw InvalidArgument("dataset dims (d=" + std::to_string(data.state_dim()) + ", d_x=" +
                          std::to_string(data.cond_dim()) + ") do not match config (d=" +
                          std::to_string(spec.dims.state) + ", d_x=" + std::to_string(spec.dims.cond) + ")");
  }
  GlobeDiffModel model = make_model(spec);
  save_checkpoint(model, ckpt_path);
  TrainHistory partial;
  auto observer = [&](const GlobeDiffModel& m, const TrainRecord& rec) {
    save_checkpoint(m, ckpt_path);
    partial.push_back(rec);
    log << "epoch " << rec.epoch << "  mse " << rec.mse << "  kl " << rec.kl << "  total " << rec.total << '\n';
  };
  try {
    TrainResult result = train(std::move(model), data, cfg.train_config(), observer);
    save_checkpoint(result.model, ckpt_path);
    write_history_csv(result.history, history_path);
    log << "checkpoint " << ckpt_path << ", history " << history_path << '\n';
  } catch (const NumericalError&) {
    write_history_csv(partial, history_path);
    throw;
  }
  return kExitOk;
}

// Conditions file: JSON Lines, each line either [x...] or {"x": [x...]}.
inline std::vector<Eigen::VectorXd> read_conditions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open conditions file '" + path + "'");
  std::vector<Eigen::VectorXd> xs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (j.is_object()) {
      if (!j.contains("x")) throw FormatError(where + ": object lacks 'x'");
      j = j["x"];
    }
    xs.push_back(detail::from_json_array(j, where));
  }
  return xs;
}

inline void write_histogram_csv(const std::vector<Eigen::MatrixXd>& samples, const std::string& path,
                                std::size_t bins = 60) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "x_index,bin_lo,bin_hi,count\n" << std::setprecision(10);
  for (std::size_t xi = 0; xi < samples.size(); ++xi) {
    const auto& s = samples[xi];
    if (s.cols() == 0) continue;
    const double lo = s.row(0).minCoeff();
    const double hi = std::max(s.row(0).maxCoeff(), lo + 1e-12);
    std::vector<std::size_t> counts(bins, 0);
    for (Eigen::Index i = 0; i < s.cols(); ++i) {
      auto b = static_cast<std::size_t>((s(0, i) - lo) / (hi - lo) * static_cast<double>(bins));
      ++counts[std::min(b, bins - 1)];
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b)
      out << xi << ',' << lo + width * static_cast<double>(b) << ',' << lo + width * static_cast<double>(b + 1) << ','
          << counts[b] << '\n';
  }
}

// Per-condition seeds come from (seed, "sample-x", index).
inline int cmd_sample(const std::string& ckpt_path, const std::string& x_path, std::size_t n, std::uint64_t seed,
                      const std::string& out_path, const std::string& hist_path, std::ostream& log) {
  const GlobeDiffModel model = load_checkpoint(ckpt_path);
  const auto xs = read_conditions(x_path);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
  std::vector<Eigen::MatrixXd> all;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    expect_dim("sample condition", model.dims.cond, static_cast<std::size_t>(xs[i].size()));
    Eigen::MatrixXd s = sample(model, xs[i], n, derive_seed(seed, "sample-x", i));
    if (!s.allFinite()) throw NumericalError("sample: non-finite state generated");
    nlohmann::ordered_json rec;
    rec["x"] = detail::to_json_array(xs[i]);
    rec["samples"] = nlohmann::ordered_json::array();
    for (Eigen::Index j = 0; j < s.cols(); ++j) rec["samples"].push_back(detail::to_json_array(s.col(j)));
    out << rec.dump() << '\n';
    all.push_back(std::move(s));
  }
  if (!hist_path.empty()) write_histogram_csv(all, hist_path);
  log << "wrote " << n << " samples for each of " << xs.size() << " conditions to " << out_path << '\n';
  return kExitOk;
}

inline BoundReport build_bound_report(const GlobeDiffModel& model, const RunConfig& cfg) {
  if (!cfg.is_gmm_task()) {
    throw InvalidArgument("verify-bounds needs a task with an analytic conditional distribution; '" +
                          cfg.task_kind + "' has none");
  }
  const ConditionalGMM task = cfg.gmm_task();
  expect_dim("checkpoint state dim vs task", task.state_dim, model.dims.state);
  expect_dim("checkpoint condition dim vs task", task.cond_dim, model.dims.cond);
  const Eigen::VectorXd x = cfg.eval_condition();
  const std::size_t n = cfg.eval_samples;
  if (n == 0) throw InvalidArgument("eval.n_samples must be >= 1");

  const Eigen::MatrixXd model_samples = sample(model, x, n, derive_seed(cfg.seed, "verify-model"));
  if (!model_samples.allFinite()) throw NumericalError("verify-bounds: non-finite model sample");
  Eigen::MatrixXd true_samples(static_cast<Eigen::Index>(task.state_dim), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng(cfg.seed, "verify-true", i);
    true_samples.col(static_cast<Eigen::Index>(i)) = gmm_sample(task, x, rng);
  }
  const double var_true = conditional_variance(task, x);
  const Theorem1Result thm1 = evaluate_theorem1(model_samples, true_samples, var_true, cfg.seed);

  const double delta = cfg.eval_delta < 0.0 ? std::sqrt(model.delta_sq_hat) : cfg.eval_delta;
  const double delta_sq = delta * delta;
  const PropagationResult prop = error_propagation_mc(model.sched, delta, model.dims.state, cfg.eval_trials,
                                                      derive_seed(cfg.seed, "verify-propagation"));
  const Theorem2Result thm2 =
      evaluate_theorem2(model_samples, task, x, delta_sq, model.eps_kl_hat, model.sched, cfg.eval_c2);
  return make_bound_report(thm1, prop, thm2, model.sched, delta_sq, model.eps_kl_hat, n);
}

// Writes <out>.csv (header + one row) and <out>.txt.
inline int cmd_verify_bounds(const std::string& ckpt_path, const RunConfig& cfg, const std::string& out_prefix,
                             std::ostream& log) {
  const GlobeDiffModel model = load_checkpoint(ckpt_path);
  const BoundReport report = build_bound_report(model, cfg);
  {
    std::ofstream csv(out_prefix + ".csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write '" + out_prefix + ".csv'");
    csv << report.csv_header() << '\n' << report.csv_row() << '\n';
  }
  {
    std::ofstream txt(out_prefix + ".txt", std::ios::binary);
    if (!txt) throw std::runtime_error("cannot write '" + out_prefix + ".txt'");
    txt << report.text();
  }
  log << report.text();
  return report.all_hold() ? kExitOk : kExitBoundViolation;
}

inline constexpr std::size_t kGradcheckMaxPairParams = 64;
inline constexpr double kGradcheckTolerance = 1e-5;

// Checks a small network and the full training loss on a tiny model.
inline int cmd_gradcheck(const TinyModelSpec& spec, std::uint64_t seed, std::ostream& log) {
  const std::size_t den_in = spec.state + spec.cond + spec.latent + kTimeEmbedDim;
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{
      {den_in, spec.hidden}, {spec.hidden, spec.hidden}, {spec.hidden, spec.state},
      {spec.cond + spec.state, spec.hidden}, {spec.hidden, 2 * spec.latent}};
  for (const auto& [in, out] : pairs) {
    if (in * out > kGradcheckMaxPairParams) {
      throw InvalidArgument("gradcheck: layer pair " + std::to_string(in) + "x" + std::to_string(out) +
                            " exceeds the cap of " + std::to_string(kGradcheckMaxPairParams) + " weights");
    }
  }
  if (spec.num_steps < 1 || spec.batch == 0) throw InvalidArgument("gradcheck: need K >= 1 and batch >= 1");

  RandomStream rng(seed, "gradcheck");
  double worst = 0.0;
  for (Activation act : {Activation::relu, Activation::mish}) {
    const Network net = init_network({spec.cond, spec.hidden, spec.hidden, spec.state}, act,
                                     derive_seed(seed, "gradcheck-net"), true);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(spec.cond), static_cast<Eigen::Index>(spec.batch));
    Eigen::MatrixXd w(static_cast<Eigen::Index>(spec.state), static_cast<Eigen::Index>(spec.batch));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    const auto r = check_network_gradients(net, x, w);
    log << "network (" << to_string(act) << "): " << r.checked << " entries, max relative error " << r.max_rel_error
        << '\n';
    worst = std::max(worst, r.max_rel_error);
  }
  const TinyProblem p = make_tiny_problem(spec, seed);
  const auto r = check_loss_gradients(p.model, p.x, p.s, p.draws);
  log << "training loss: " << r.checked << " entries, max relative error " << r.max_rel_error << '\n';
  worst = std::max(worst, r.max_rel_error);
  const bool pass = worst < kGradcheckTolerance;
  log << (pass ? "PASS" : "FAIL") << " max relative error " << worst << " (tolerance " << kGradcheckTolerance << ")\n";
  return pass ? kExitOk : kExitNumerical;
}

}  // namespace globediff::cli
