#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "globediff/analysis.hpp"
#include "globediff/synth.hpp"

using namespace globediff;

namespace {

Eigen::VectorXd scalar(double v) { return Eigen::VectorXd::Constant(1, v); }

ConditionalGMM two_weight_task(double w0, double far) {
  ConditionalGMM t = make_bimodal_task(1.0, 0.1, 1);
  t.modes[0].weight = w0;
  t.modes[1].weight = 1.0 - w0;
  t.modes[1].mean_offset = scalar(far);
  return t;
}

}  // namespace

TEST(Bimodal, ModesAndSeparation) {
  const auto t = make_bimodal_task(2.0, 0.1, 1);
  ASSERT_EQ(t.num_modes(), 2u);
  const auto means = t.mode_means(scalar(0.5));
  EXPECT_DOUBLE_EQ(means[0][0], 2.5);
  EXPECT_DOUBLE_EQ(means[1][0], -1.5);
  for (double x : {-1.0, 0.0, 3.0}) EXPECT_DOUBLE_EQ(t.min_mode_distance(scalar(x)), 4.0);
  EXPECT_NEAR(conditional_variance(t, scalar(0.0)), 4.01, 1e-12);
  EXPECT_NEAR(t.max_trace(), 0.01, 1e-15);
}

TEST(Bimodal, RejectsDegenerateParameters) {
  EXPECT_THROW(make_bimodal_task(0.0, 0.1, 1), InvalidArgument);
  EXPECT_THROW(make_bimodal_task(2.0, 0.0, 1), InvalidArgument);
  EXPECT_THROW(make_bimodal_task(2.0, 0.1, 0), InvalidArgument);
}

TEST(GmmSample, DegenerateSingleModeIsDeterministic) {
  ConditionalGMM t = make_unimodal_task(1e-150, 2);
  RandomStream rng(0, "deg");
  Eigen::VectorXd x(2);
  x << 0.3, -0.7;
  EXPECT_TRUE(gmm_sample(t, x, rng).isApprox(x, 1e-12));
}

TEST(GmmSample, ModeCountsAreBinomial) {
  const auto t = make_bimodal_task(2.0, 0.1, 1);
  RandomStream rng(1, "counts");
  const int n = 10000;
  int first = 0;
  for (int i = 0; i < n; ++i) first += gmm_sample_with_mode(t, scalar(0.0), rng).mode == 0;
  EXPECT_NEAR(first, n * 0.5, 3.0 * std::sqrt(n * 0.25));
}

TEST(GmmSample, ZeroWeightModeNeverDrawn) {
  const auto t = two_weight_task(1.0, 50.0);
  RandomStream rng(2, "zero-weight");
  for (int i = 0; i < 2000; ++i) EXPECT_EQ(gmm_sample_with_mode(t, scalar(0.0), rng).mode, 0u);
}

TEST(ConditionalVariance, Examples) {
  const auto uni = make_unimodal_task(0.3, 3);
  EXPECT_NEAR(conditional_variance(uni, Eigen::VectorXd::Zero(3)), 3 * 0.09, 1e-15);
  EXPECT_NEAR(conditional_variance(two_weight_task(1.0, 100.0), scalar(0.3)), 0.01, 1e-15);
}

TEST(ConditionalVariance, MatchesMonteCarlo) {
  ConditionalGMM t = make_bimodal_task(1.5, 0.4, 2);
  t.modes[0].weight = 0.3;
  t.modes[1].weight = 0.7;
  Eigen::VectorXd x(2);
  x << 0.2, -0.5;
  RandomStream rng(3, "var-mc");
  const int n = 100000;
  Eigen::MatrixXd s(2, n);
  for (int i = 0; i < n; ++i) s.col(i) = gmm_sample(t, x, rng);
  const Eigen::VectorXd mean = s.rowwise().mean();
  const Eigen::RowVectorXd sq = (s.colwise() - mean).colwise().squaredNorm();
  const double est = sq.mean();
  const double se = std::sqrt((sq.array() - est).square().sum() / (n - 1.0) / n);
  EXPECT_NEAR(est, conditional_variance(t, x), 3.0 * se);
}

TEST(HistoryAux, WindowAndPadding) {
  std::vector<Eigen::VectorXd> obs;
  for (int t = 0; t < 6; ++t) obs.push_back(Eigen::Vector2d(t + 1.0, -(t + 1.0)));
  EXPECT_TRUE(build_history_aux(obs, 4, 0).isApprox(obs[4]));
  const Eigen::VectorXd full = build_history_aux(obs, 5, 3);
  ASSERT_EQ(full.size(), 8);
  for (int slot = 0; slot < 4; ++slot) EXPECT_TRUE(full.segment(2 * slot, 2).isApprox(obs[2 + slot]));
  const Eigen::VectorXd padded = build_history_aux(obs, 1, 3);
  EXPECT_TRUE(padded.head(4).isZero(0.0));
  EXPECT_TRUE(padded.segment(4, 2).isApprox(obs[0]));
  EXPECT_TRUE(padded.segment(6, 2).isApprox(obs[1]));
  EXPECT_THROW(build_history_aux(obs, 6, 3), InvalidArgument);
}

TEST(JointAux, AgentOrder) {
  std::vector<Eigen::VectorXd> obs{Eigen::Vector4d(1, 2, 3, 4), Eigen::Vector4d(5, 6, 7, 8), Eigen::Vector4d(9, 10, 11, 12)};
  EXPECT_TRUE(build_joint_aux({obs[0]}).isApprox(obs[0]));
  const Eigen::VectorXd x = build_joint_aux(obs);
  ASSERT_EQ(x.size(), 12);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(x[i], i + 1.0);
  EXPECT_FALSE(build_joint_aux({obs[1], obs[0], obs[2]}).isApprox(x));
  EXPECT_THROW(build_joint_aux({obs[0], Eigen::Vector2d(1, 2)}), DimensionMismatch);
  EXPECT_THROW(build_joint_aux({}), InvalidArgument);
}

TEST(AuxConstructions, InjectiveOnRandomInputs) {
  RandomStream rng(4, "injective");
  std::set<std::vector<double>> seen_history, seen_joint;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Eigen::VectorXd> obs;
    for (int t = 0; t < 4; ++t) obs.push_back(rng.normal_vector(3));
    const Eigen::VectorXd h = build_history_aux(obs, 3, 3);
    const Eigen::VectorXd j = build_joint_aux(obs);
    seen_history.insert(std::vector<double>(h.data(), h.data() + h.size()));
    seen_joint.insert(std::vector<double>(j.data(), j.data() + j.size()));
  }
  EXPECT_EQ(seen_history.size(), 500u);
  EXPECT_EQ(seen_joint.size(), 500u);
}

TEST(GridWorld, ObservationNeverRevealsCellsBeyondSight) {
  // Exhaustive over agent positions on a 5x5 grid with one landmark placed
  // in every cell, for every sight radius.
  GridSpec spec;
  spec.agents = 1;
  spec.landmarks = 1;
  for (spec.sight = 0; spec.sight <= 4; ++spec.sight) {
    for (int a = 0; a < 25; ++a) {
      for (int l = 0; l < 25; ++l) {
        GridState st{{{a / 5, a % 5}}, {{l / 5, l % 5}}, 0};
        const Eigen::VectorXd o = observe(spec, st, 0);
        for (int c = 0; c < 25; ++c) {
          const bool visible = chebyshev(st.agents[0], {c / 5, c % 5}) <= spec.sight;
          EXPECT_EQ(o[2 + 2 * c + 1], visible ? 1.0 : 0.0);
          EXPECT_EQ(o[2 + 2 * c], visible ? cell_value(st, {c / 5, c % 5}) : 0.0);
        }
      }
    }
  }
}

TEST(GridWorld, GlobalStateLayout) {
  GridSpec spec;
  spec.agents = 2;
  spec.landmarks = 1;
  GridState st{{{0, 4}, {2, 1}}, {{4, 4}}, 0};
  const Eigen::VectorXd s = global_state(spec, st);
  ASSERT_EQ(s.size(), 6);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[1], 1.0);
  EXPECT_EQ(s[2], 0.5);
  EXPECT_EQ(s[3], 0.25);
  EXPECT_EQ(s[4], 1.0);
}

TEST(GenerateDataset, DeterministicPerSeed) {
  const GmmSource src{make_bimodal_task(2.0, 0.1, 1)};
  const Dataset a = generate_dataset(src, 100, 5), b = generate_dataset(src, 100, 5), c = generate_dataset(src, 100, 6);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.s, b.s);
  EXPECT_NE(a.s, c.s);
  EXPECT_THROW(generate_dataset(src, 0, 5), InvalidArgument);
}

TEST(GenerateDataset, BimodalVarianceAroundCondition) {
  const Dataset d = generate_dataset(GmmSource{make_bimodal_task(2.0, 0.1, 1)}, 5000, 7);
  const Eigen::RowVectorXd r = d.s.row(0) - d.x.row(0);
  const double var = (r.array() - r.mean()).square().mean();
  EXPECT_NEAR(var, 4.01, 0.401);
  EXPECT_EQ(d.meta["task"], "bimodal");
}

TEST(GenerateDataset, GridPairsUseConfiguredAux) {
  GridSpec spec;
  for (AuxMode aux : {AuxMode::history, AuxMode::joint}) {
    spec.aux = aux;
    const Dataset d = generate_dataset(spec, 40, 1);
    EXPECT_EQ(d.cond_dim(), grid_cond_dim(spec));
    EXPECT_EQ(d.state_dim(), global_state_dim(spec));
    EXPECT_EQ(d.size(), 40u);
  }
  spec.observer = 5;
  EXPECT_THROW(generate_dataset(spec, 10, 0), InvalidArgument);
}
