#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "schedule.hpp"
#include "synth.hpp"

namespace globediff {

// Run configuration file grammar (one entry per line):
//
//   line    := blank | comment | entry
//   comment := '#' text
//   entry   := key '=' value [comment]
//   key     := [a-z0-9_.]+         (must be a known key; see RunConfig)
//   value   := number | word | number (',' number)*
//
// Whitespace around tokens is ignored. Each key may appear at most once;
// missing keys keep their defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = ".";

  // task
  std::string task_kind = "bimodal";  // bimodal | unimodal | grid
  double task_c = 2.0;
  double task_sigma = 0.1;
  std::size_t task_d = 1;
  std::size_t n_pairs = 5000;
  double x_lo = -1.0;
  double x_hi = 1.0;
  GridSpec grid;

  ScheduleSpec schedule;

  std::size_t latent_dim = 16;
  std::vector<std::size_t> denoiser_hidden{128, 128, 128};
  std::vector<std::size_t> head_hidden{64, 64};

  TrainConfig train;

  // verify-bounds
  std::vector<double> eval_x{0.0};
  std::size_t eval_samples = 1000;
  std::size_t eval_trials = 100000;
  double eval_c2 = 1.0;
  double eval_delta = -1.0;  // < 0: use sqrt(delta_sq_hat) from the checkpoint

  bool operator==(const RunConfig&) const = default;

  bool is_gmm_task() const { return task_kind == "bimodal" || task_kind == "unimodal"; }

  ConditionalGMM gmm_task() const {
    if (task_kind == "bimodal") return make_bimodal_task(task_c, task_sigma, task_d);
    if (task_kind == "unimodal") return make_unimodal_task(task_sigma, task_d);
    throw InvalidArgument("task '" + task_kind + "' has no analytic conditional distribution");
  }

  DataSource data_source() const {
    if (task_kind == "grid") return grid;
    return GmmSource{gmm_task(), x_lo, x_hi};
  }

  ModelDims model_dims() const {
    if (task_kind == "grid") return {global_state_dim(grid), grid_cond_dim(grid), latent_dim};
    return {task_d, task_d, latent_dim};
  }

  ModelSpec model_spec() const {
    ModelSpec spec;
    spec.dims = model_dims();
    spec.schedule = schedule;
    spec.denoiser_hidden = denoiser_hidden;
    spec.head_hidden = head_hidden;
    spec.beta_kl = train.beta_kl;
    spec.seed = derive_seed(seed, "model-init");
    return spec;
  }

  // eval.x with a single entry is broadcast to every coordinate.
  Eigen::VectorXd eval_condition() const {
    const auto dx = static_cast<Eigen::Index>(model_dims().cond);
    if (eval_x.size() == 1) return Eigen::VectorXd::Constant(dx, eval_x[0]);
    expect_dim("eval.x", static_cast<std::size_t>(dx), eval_x.size());
    return Eigen::Map<const Eigen::VectorXd>(eval_x.data(), dx);
  }

  TrainConfig train_config() const {
    TrainConfig cfg = train;
    cfg.seed = derive_seed(seed, "train");
    return cfg;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && text.front() == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) throw FormatError("invalid number '" + text + "'");
  return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(trim(item)));
  if (out.empty()) throw FormatError("empty list");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) out += format_double(v[i]);
    else out += std::to_string(v[i]);
  }
  return out;
}

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Proj>
ConfigKey number_key(std::string name, Proj proj) {
  return {std::move(name), [proj](RunConfig& c, const std::string& v) { proj(c) = parse_number<T>(v); },
          [proj](const RunConfig& c) {
            const T v = proj(c);
            if constexpr (std::is_floating_point_v<T>) return format_double(v);
            else return std::to_string(v);
          }};
}

template <typename T, typename Proj>
ConfigKey list_key(std::string name, Proj proj) {
  return {std::move(name), [proj](RunConfig& c, const std::string& v) { proj(c) = parse_list<T>(v); },
          [proj](const RunConfig& c) { return join(proj(c)); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(number_key<std::uint64_t>("seed", [](auto& c) -> auto& { return c.seed; }));
    k.push_back({"output.dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
                 [](const RunConfig& c) { return c.out_dir; }});
    k.push_back({"task.kind",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "bimodal" && v != "unimodal" && v != "grid") {
                     throw FormatError("task.kind must be bimodal, unimodal or grid");
                   }
                   c.task_kind = v;
                 },
                 [](const RunConfig& c) { return c.task_kind; }});
    k.push_back(number_key<double>("task.c", [](auto& c) -> auto& { return c.task_c; }));
    k.push_back(number_key<double>("task.sigma", [](auto& c) -> auto& { return c.task_sigma; }));
    k.push_back(number_key<std::size_t>("task.d", [](auto& c) -> auto& { return c.task_d; }));
    k.push_back(number_key<std::size_t>("task.n_pairs", [](auto& c) -> auto& { return c.n_pairs; }));
    k.push_back(number_key<double>("task.x_lo", [](auto& c) -> auto& { return c.x_lo; }));
    k.push_back(number_key<double>("task.x_hi", [](auto& c) -> auto& { return c.x_hi; }));
    k.push_back(number_key<int>("grid.size", [](auto& c) -> auto& { return c.grid.size; }));
    k.push_back(number_key<int>("grid.agents", [](auto& c) -> auto& { return c.grid.agents; }));
    k.push_back(number_key<int>("grid.sight", [](auto& c) -> auto& { return c.grid.sight; }));
    k.push_back(number_key<int>("grid.landmarks", [](auto& c) -> auto& { return c.grid.landmarks; }));
    k.push_back(number_key<int>("grid.episode_len", [](auto& c) -> auto& { return c.grid.episode_len; }));
    k.push_back({"grid.aux", [](RunConfig& c, const std::string& v) {
                   try {
                     c.grid.aux = parse_aux_mode(v);
                   } catch (const InvalidArgument& e) {
                     throw FormatError(e.what());
                   }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.grid.aux)); }});
    k.push_back(number_key<int>("grid.m", [](auto& c) -> auto& { return c.grid.history; }));
    k.push_back(number_key<int>("grid.observer", [](auto& c) -> auto& { return c.grid.observer; }));
    k.push_back({"schedule.kind", [](RunConfig& c, const std::string& v) {
                   try {
                     c.schedule.kind = parse_schedule_kind(v);
                   } catch (const InvalidArgument& e) {
                     throw FormatError(e.what());
                   }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.schedule.kind)); }});
    k.push_back(number_key<int>("schedule.K", [](auto& c) -> auto& { return c.schedule.num_steps; }));
    k.push_back(number_key<double>("schedule.beta_lo", [](auto& c) -> auto& { return c.schedule.beta_lo; }));
    k.push_back(number_key<double>("schedule.beta_hi", [](auto& c) -> auto& { return c.schedule.beta_hi; }));
    k.push_back(number_key<std::size_t>("model.d_z", [](auto& c) -> auto& { return c.latent_dim; }));
    k.push_back(list_key<std::size_t>("model.denoiser_hidden", [](auto& c) -> auto& { return c.denoiser_hidden; }));
    k.push_back(list_key<std::size_t>("model.head_hidden", [](auto& c) -> auto& { return c.head_hidden; }));
    k.push_back(number_key<std::size_t>("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    k.push_back(number_key<std::size_t>("train.epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    k.push_back(number_key<double>("train.lr", [](auto& c) -> auto& { return c.train.lr; }));
    k.push_back(number_key<double>("train.weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; }));
    k.push_back(number_key<double>("train.beta_kl", [](auto& c) -> auto& { return c.train.beta_kl; }));
    k.push_back(number_key<std::size_t>("train.eval_interval", [](auto& c) -> auto& { return c.train.eval_interval; }));
    k.push_back(list_key<double>("eval.x", [](auto& c) -> auto& { return c.eval_x; }));
    k.push_back(number_key<std::size_t>("eval.n_samples", [](auto& c) -> auto& { return c.eval_samples; }));
    k.push_back(number_key<std::size_t>("eval.trials", [](auto& c) -> auto& { return c.eval_trials; }));
    k.push_back(number_key<double>("eval.c2", [](auto& c) -> auto& { return c.eval_c2; }));
    k.push_back(number_key<double>("eval.delta", [](auto& c) -> auto& { return c.eval_delta; }));
    return k;
  }();
  return keys;
}

}  // namespace detail

// Semantic checks that do not depend on a single key.
inline void validate_config(const RunConfig& c) {
  if (c.is_gmm_task()) {
    if (c.task_d == 0) throw FormatError("task.d must be >= 1");
    if (c.eval_x.size() != 1 && c.eval_x.size() != c.task_d) throw FormatError("eval.x must have 1 or task.d entries");
    (void)c.gmm_task();
  } else {
    c.grid.validate();
  }
  (void)DiffusionSchedule(c.schedule);
  if (c.latent_dim == 0) throw FormatError("model.d_z must be >= 1");
  if (c.n_pairs == 0) throw FormatError("task.n_pairs must be >= 1");
  if (c.train.batch_size == 0) throw FormatError("train.batch_size must be >= 1");
  if (c.train.eval_interval == 0) throw FormatError("train.eval_interval must be >= 1");
  if (c.train.beta_kl < 0.0) throw FormatError("train.beta_kl must be >= 0");
}

inline RunConfig parse_config(std::istream& in, const std::string& name = "config") {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  const auto& keys = detail::config_keys();
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = name + ":" + std::to_string(line_no);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw FormatError(where + ": expected 'key = value'");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return k.name == key; });
    if (it == keys.end()) throw FormatError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw FormatError(where + ": duplicate key '" + key + "'");
    if (value.empty()) throw FormatError(where + ": missing value for '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + key + ": " + e.what());
    }
  }
  try {
    validate_config(cfg);
  } catch (const std::exception& e) {
    throw FormatError(name + ": " + e.what());
  }
  return cfg;
}

inline RunConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path + "'");
  return parse_config(in, path);
}

inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace globediff
