#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dataset.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace globediff {

// One Gaussian component: mean = mean_map * x + mean_offset, covariance
// diag(variances).
struct GaussianMode {
  double weight = 1.0;
  Eigen::MatrixXd mean_map;
  Eigen::VectorXd mean_offset;
  Eigen::VectorXd variances;
};

// Ground-truth p(s | x) as a finite mixture with affine means.
struct ConditionalGMM {
  std::string name = "gmm";
  std::size_t state_dim = 1;
  std::size_t cond_dim = 1;
  std::vector<GaussianMode> modes;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();

  std::size_t num_modes() const { return modes.size(); }

  Eigen::VectorXd mode_mean(std::size_t i, const Eigen::VectorXd& x) const {
    expect_dim("mode_mean condition", cond_dim, static_cast<std::size_t>(x.size()));
    return modes.at(i).mean_map * x + modes.at(i).mean_offset;
  }

  std::vector<Eigen::VectorXd> mode_means(const Eigen::VectorXd& x) const {
    std::vector<Eigen::VectorXd> out;
    out.reserve(modes.size());
    for (std::size_t i = 0; i < modes.size(); ++i) out.push_back(mode_mean(i, x));
    return out;
  }

  // D(x): smallest pairwise distance between mode centers (infinity for N = 1).
  double min_mode_distance(const Eigen::VectorXd& x) const {
    const auto means = mode_means(x);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < means.size(); ++i)
      for (std::size_t j = i + 1; j < means.size(); ++j) best = std::min(best, (means[i] - means[j]).norm());
    return best;
  }

  double max_trace() const {
    double best = 0.0;
    for (const auto& m : modes) best = std::max(best, m.variances.sum());
    return best;
  }

  void validate() const {
    if (modes.empty()) throw InvalidArgument("gmm: need at least one mode");
    double total = 0.0;
    for (const auto& m : modes) {
      if (!(m.weight >= 0.0)) throw InvalidArgument("gmm: weights must be non-negative");
      total += m.weight;
      if (static_cast<std::size_t>(m.mean_map.rows()) != state_dim ||
          static_cast<std::size_t>(m.mean_map.cols()) != cond_dim ||
          static_cast<std::size_t>(m.mean_offset.size()) != state_dim ||
          static_cast<std::size_t>(m.variances.size()) != state_dim) {
        throw InvalidArgument("gmm: mode shapes disagree with (d, d_x)");
      }
      if ((m.variances.array() <= 0.0).any()) throw InvalidArgument("gmm: variances must be positive");
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("gmm: weights must sum to 1");
  }
};

// Two equal-weight modes at x + c e and x - c e, e = first basis vector,
// covariance sigma^2 I. Conditions live in the same space as states.
inline ConditionalGMM make_bimodal_task(double c, double sigma, std::size_t d) {
  if (!(c > 0.0) || !(sigma > 0.0) || d == 0) throw InvalidArgument("bimodal task: need c > 0, sigma > 0, d >= 1");
  ConditionalGMM task;
  task.name = "bimodal";
  task.state_dim = d;
  task.cond_dim = d;
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  e[0] = 1.0;
  for (double sign : {1.0, -1.0}) {
    task.modes.push_back(GaussianMode{0.5, Eigen::MatrixXd::Identity(n, n), sign * c * e,
                                      Eigen::VectorXd::Constant(n, sigma * sigma)});
  }
  task.params["c"] = c;
  task.params["sigma"] = sigma;
  return task;
}

// s ~ N(x, sigma^2 I).
inline ConditionalGMM make_unimodal_task(double sigma, std::size_t d) {
  if (!(sigma > 0.0) || d == 0) throw InvalidArgument("unimodal task: need sigma > 0, d >= 1");
  ConditionalGMM task;
  task.name = "unimodal";
  task.state_dim = d;
  task.cond_dim = d;
  const auto n = static_cast<Eigen::Index>(d);
  task.modes.push_back(GaussianMode{1.0, Eigen::MatrixXd::Identity(n, n), Eigen::VectorXd::Zero(n),
                                    Eigen::VectorXd::Constant(n, sigma * sigma)});
  task.params["sigma"] = sigma;
  return task;
}

struct GmmDraw {
  Eigen::VectorXd state;
  std::size_t mode = 0;
};

inline GmmDraw gmm_sample_with_mode(const ConditionalGMM& task, const Eigen::VectorXd& x, RandomStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t mode = task.modes.size() - 1;
  for (std::size_t i = 0; i < task.modes.size(); ++i) {
    acc += task.modes[i].weight;
    if (u < acc && task.modes[i].weight > 0.0) {
      mode = i;
      break;
    }
  }
  while (task.modes[mode].weight <= 0.0 && mode > 0) --mode;
  Eigen::VectorXd s = task.mode_mean(mode, x);
  const auto& var = task.modes[mode].variances;
  for (Eigen::Index j = 0; j < s.size(); ++j) s[j] += std::sqrt(var[j]) * rng.normal();
  return {std::move(s), mode};
}

inline Eigen::VectorXd gmm_sample(const ConditionalGMM& task, const Eigen::VectorXd& x, RandomStream& rng) {
  return gmm_sample_with_mode(task, x, rng).state;
}

// ---------------------------------------------------------------------------
// Auxiliary observations

// [o_{t-m}; ...; o_t], with zero blocks for time steps before 0.
inline Eigen::VectorXd build_history_aux(const std::vector<Eigen::VectorXd>& observations, std::size_t t,
                                         std::size_t m) {
  if (t >= observations.size()) throw InvalidArgument("history aux: t beyond recorded observations");
  const auto dim = observations[t].size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim * static_cast<Eigen::Index>(m + 1));
  for (std::size_t slot = 0; slot <= m; ++slot) {
    const auto back = static_cast<std::int64_t>(m - slot);
    const auto step = static_cast<std::int64_t>(t) - back;
    if (step < 0) continue;
    const auto& o = observations[static_cast<std::size_t>(step)];
    expect_dim("history aux observation", static_cast<std::size_t>(dim), static_cast<std::size_t>(o.size()));
    out.segment(static_cast<Eigen::Index>(slot) * dim, dim) = o;
  }
  return out;
}

// [o^1; ...; o^n] in agent order.
inline Eigen::VectorXd build_joint_aux(const std::vector<Eigen::VectorXd>& observations) {
  if (observations.empty()) throw InvalidArgument("joint aux: need at least one agent");
  const auto dim = observations.front().size();
  Eigen::VectorXd out(dim * static_cast<Eigen::Index>(observations.size()));
  for (std::size_t i = 0; i < observations.size(); ++i) {
    expect_dim("joint aux observation", static_cast<std::size_t>(dim), static_cast<std::size_t>(observations[i].size()));
    out.segment(static_cast<Eigen::Index>(i) * dim, dim) = observations[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid world

enum class AuxMode { history, joint };

inline std::string_view to_string(AuxMode m) { return m == AuxMode::history ? "history" : "joint"; }

inline AuxMode parse_aux_mode(std::string_view text) {
  if (text == "history") return AuxMode::history;
  if (text == "joint") return AuxMode::joint;
  throw InvalidArgument("unknown aux mode '" + std::string(text) + "'");
}

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

struct GridSpec {
  int size = 5;
  int agents = 3;
  int sight = 1;
  int landmarks = 2;
  int episode_len = 16;
  AuxMode aux = AuxMode::history;
  int history = 3;  // m
  int observer = 0;

  bool operator==(const GridSpec&) const = default;

  void validate() const {
    if (size < 2) throw InvalidArgument("grid: size must be >= 2");
    if (agents < 1) throw InvalidArgument("grid: need at least one agent");
    if (sight < 0) throw InvalidArgument("grid: sight radius must be >= 0");
    if (landmarks < 0) throw InvalidArgument("grid: landmarks must be >= 0");
    if (episode_len < 1) throw InvalidArgument("grid: episode_len must be >= 1");
    if (history < 0) throw InvalidArgument("grid: history m must be >= 0");
    if (observer < 0 || observer >= agents) throw InvalidArgument("grid: observer must index an agent");
  }
};

struct GridState {
  std::vector<Cell> agents;
  std::vector<Cell> landmarks;
  int t = 0;
};

// Cell contents code: 1 if any agent stands there, +2 if a landmark does.
inline double cell_value(const GridState& state, Cell c) {
  double v = 0.0;
  if (std::any_of(state.agents.begin(), state.agents.end(), [&](const Cell& a) { return a == c; })) v += 1.0;
  if (std::any_of(state.landmarks.begin(), state.landmarks.end(), [&](const Cell& l) { return l == c; })) v += 2.0;
  return v;
}

inline int chebyshev(Cell a, Cell b) { return std::max(std::abs(a.row - b.row), std::abs(a.col - b.col)); }

inline std::size_t observation_dim(const GridSpec& spec) {
  return 2 + 2 * static_cast<std::size_t>(spec.size * spec.size);
}

// [own row, own col] scaled to [0, 1], then per cell in row-major order a
// (value, visible) pair. Cells beyond the sight radius read (0, 0).
inline Eigen::VectorXd observe(const GridSpec& spec, const GridState& state, int agent) {
  const Cell self = state.agents.at(static_cast<std::size_t>(agent));
  const double scale = 1.0 / (spec.size - 1);
  Eigen::VectorXd o = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(observation_dim(spec)));
  o[0] = self.row * scale;
  o[1] = self.col * scale;
  Eigen::Index at = 2;
  for (int r = 0; r < spec.size; ++r) {
    for (int c = 0; c < spec.size; ++c, at += 2) {
      if (chebyshev(self, {r, c}) > spec.sight) continue;
      o[at] = cell_value(state, {r, c});
      o[at + 1] = 1.0;
    }
  }
  return o;
}

inline std::size_t global_state_dim(const GridSpec& spec) {
  return 2 * static_cast<std::size_t>(spec.agents + spec.landmarks);
}

// Agent coordinates then landmark coordinates, each scaled to [0, 1].
inline Eigen::VectorXd global_state(const GridSpec& spec, const GridState& state) {
  const double scale = 1.0 / (spec.size - 1);
  Eigen::VectorXd s(static_cast<Eigen::Index>(global_state_dim(spec)));
  Eigen::Index at = 0;
  for (const auto* group : {&state.agents, &state.landmarks}) {
    for (const Cell& c : *group) {
      s[at++] = c.row * scale;
      s[at++] = c.col * scale;
    }
  }
  return s;
}

inline GridState random_grid_state(const GridSpec& spec, RandomStream& rng) {
  GridState st;
  auto cell = [&] { return Cell{static_cast<int>(rng.integer(0, spec.size - 1)), static_cast<int>(rng.integer(0, spec.size - 1))}; };
  for (int i = 0; i < spec.agents; ++i) st.agents.push_back(cell());
  for (int i = 0; i < spec.landmarks; ++i) st.landmarks.push_back(cell());
  return st;
}

// Every agent takes one of {stay, up, down, left, right}; moves off the grid
// become stays. Landmarks are fixed.
inline void random_walk_step(const GridSpec& spec, GridState& state, RandomStream& rng) {
  static constexpr int kMoves[5][2] = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  for (Cell& a : state.agents) {
    const auto& mv = kMoves[rng.integer(0, 4)];
    const Cell next{a.row + mv[0], a.col + mv[1]};
    if (next.row >= 0 && next.row < spec.size && next.col >= 0 && next.col < spec.size) a = next;
  }
  ++state.t;
}

inline std::size_t grid_cond_dim(const GridSpec& spec) {
  return spec.aux == AuxMode::history ? observation_dim(spec) * static_cast<std::size_t>(spec.history + 1)
                                      : observation_dim(spec) * static_cast<std::size_t>(spec.agents);
}

// ---------------------------------------------------------------------------
// Dataset generation

struct GmmSource {
  ConditionalGMM task;
  double x_lo = -1.0;
  double x_hi = 1.0;
};

using DataSource = std::variant<GmmSource, GridSpec>;

inline Dataset generate_dataset(const DataSource& source, std::size_t n_pairs, std::uint64_t seed) {
  if (n_pairs == 0) throw InvalidArgument("generate_dataset: n_pairs must be >= 1");
  Dataset data;
  const auto n = static_cast<Eigen::Index>(n_pairs);
  if (const auto* gmm = std::get_if<GmmSource>(&source)) {
    gmm->task.validate();
    if (!(gmm->x_lo <= gmm->x_hi)) throw InvalidArgument("generate_dataset: x_lo must be <= x_hi");
    data.x.resize(static_cast<Eigen::Index>(gmm->task.cond_dim), n);
    data.s.resize(static_cast<Eigen::Index>(gmm->task.state_dim), n);
    for (Eigen::Index i = 0; i < n; ++i) {
      RandomStream rng(seed, "pair", static_cast<std::uint64_t>(i));
      Eigen::VectorXd x(data.x.rows());
      for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = rng.uniform(gmm->x_lo, gmm->x_hi);
      data.x.col(i) = x;
      data.s.col(i) = gmm_sample(gmm->task, x, rng);
    }
    data.meta["task"] = gmm->task.name;
    data.meta["seed"] = seed;
    for (const auto& [key, value] : gmm->task.params.items()) data.meta[key] = value;
    data.meta["x_lo"] = gmm->x_lo;
    data.meta["x_hi"] = gmm->x_hi;
    return data;
  }

  const auto& spec = std::get<GridSpec>(source);
  spec.validate();
  data.x.resize(static_cast<Eigen::Index>(grid_cond_dim(spec)), n);
  data.s.resize(static_cast<Eigen::Index>(global_state_dim(spec)), n);
  Eigen::Index filled = 0;
  for (std::uint64_t episode = 0; filled < n; ++episode) {
    RandomStream rng(seed, "episode", episode);
    GridState st = random_grid_state(spec, rng);
    std::vector<Eigen::VectorXd> own_history;
    for (int t = 0; t < spec.episode_len && filled < n; ++t) {
      if (t > 0) random_walk_step(spec, st, rng);
      own_history.push_back(observe(spec, st, spec.observer));
      Eigen::VectorXd x;
      if (spec.aux == AuxMode::history) {
        x = build_history_aux(own_history, static_cast<std::size_t>(t), static_cast<std::size_t>(spec.history));
      } else {
        std::vector<Eigen::VectorXd> joint;
        for (int a = 0; a < spec.agents; ++a) joint.push_back(observe(spec, st, a));
        x = build_joint_aux(joint);
      }
      data.x.col(filled) = x;
      data.s.col(filled) = global_state(spec, st);
      ++filled;
    }
  }
  data.meta["task"] = "grid";
  data.meta["seed"] = seed;
  data.meta["size"] = spec.size;
  data.meta["agents"] = spec.agents;
  data.meta["sight"] = spec.sight;
  data.meta["landmarks"] = spec.landmarks;
  data.meta["episode_len"] = spec.episode_len;
  data.meta["aux"] = std::string(to_string(spec.aux));
  data.meta["m"] = spec.history;
  return data;
}

}  // namespace globediff
