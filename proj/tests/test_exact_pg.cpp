#include <gtest/gtest.h>

#include "oracles.hpp"
#include "selab/environments.hpp"
#include "selab/exact_pg.hpp"

using namespace selab;

namespace {

constexpr EntropyKind kKinds[] = {EntropyKind::discounted, EntropyKind::stationary};

SoftmaxPolicy random_policy(std::uint64_t k, int rows, int cols) { return {oracle::random_theta(k, rows, cols)}; }

}  // namespace

TEST(Objective, ZeroLambdaIsPolicyReturn) {
  for (std::uint64_t k = 0; k < 10; ++k) {
    const auto m = oracle::random_mdp(k, 5, 3, 0.9);
    const auto p = random_policy(k, 5, 3);
    const auto f = FeatureMap::identity(5);
    for (auto kind : kKinds) EXPECT_EQ(regularized_objective(m, p, f, 0.0, kind), policy_return(m, p, f));
  }
}

TEST(Objective, PureEntropyOnRingIsLogN) {
  const auto env = build({EnvName::ring, {{"n", 8}, {"slip", 0.2}}});
  const auto p = SoftmaxPolicy::uniform(8, 2);
  EXPECT_NEAR(regularized_objective(env.mdp, p, env.features, 1.0, EntropyKind::stationary), std::log(8.0), 1e-10);
}

TEST(Objective, ComposesFromIndependentPieces) {
  const auto env = build({EnvName::two_state, {}});
  const auto p = random_policy(3, 2, 2);
  const Matrix pi = oracle::softmax_rows(p.theta);
  const double j = env.mdp.alpha.dot(oracle::iterated_values(env.mdp, pi));
  const Vector d = oracle::series_occupancy(env.mdp, pi);
  double h = 0.0;
  for (int s = 0; s < 2; ++s) h -= d(s) * std::log(d(s));
  EXPECT_NEAR(regularized_objective(env.mdp, p, env.features, 0.1, EntropyKind::discounted), j + 0.1 * h, 1e-10);
}

TEST(Objective, NegativeLambdaRejected) {
  const auto m = oracle::random_mdp(1, 3, 2, 0.9);
  EXPECT_THROW(regularized_objective(m, SoftmaxPolicy::uniform(3, 2), FeatureMap::identity(3), -0.1,
                                     EntropyKind::discounted),
               std::invalid_argument);
}

TEST(Gradient, MatchesFiniteDifferencesOnRandomMdps) {
  for (std::uint64_t k = 0; k < 20; ++k) {
    const auto m = oracle::random_mdp(100 + k, 5, 3, 0.9);
    const auto p = random_policy(100 + k, 5, 3);
    const auto f = FeatureMap::identity(5);
    for (double lambda : {0.0, 0.1})
      for (auto kind : kKinds) {
        const Matrix g = analytic_gradient(m, p, f, lambda, kind);
        const Matrix fd = finite_diff_gradient(m, p, f, lambda, kind);
        EXPECT_LT(oracle::rel_inf_error(g, fd), 1e-4) << "mdp " << k << " lambda " << lambda << " " << to_string(kind);
      }
  }
}

TEST(Gradient, EpisodicEnvironmentsMatchFiniteDifferences) {
  for (EnvName n : {EnvName::chain, EnvName::frozen_lake, EnvName::gridworld_slits}) {
    const auto env = build({n, {}});
    const auto p = random_policy(7, env.features.n_features, env.mdp.n_actions);
    for (auto kind : kKinds) {
      const Matrix g = analytic_gradient(env.mdp, p, env.features, 0.1, kind);
      const Matrix fd = finite_diff_gradient(env.mdp, p, env.features, 0.1, kind);
      EXPECT_LT(oracle::rel_inf_error(g, fd), 1e-4) << to_string(n) << " " << to_string(kind);
    }
  }
}

TEST(Gradient, SymmetricRingPureEntropyIsStationaryPoint) {
  const auto env = build({EnvName::ring, {{"n", 8}, {"slip", 0.2}}});
  const auto p = SoftmaxPolicy::uniform(8, 2);
  for (auto kind : kKinds) {
    TabularMdp m = env.mdp;
    m.reward.setZero();
    EXPECT_LT(analytic_gradient(m, p, env.features, 1.0, kind).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Gradient, ZeroLambdaMatchesPolicyGradientTheorem) {
  for (std::uint64_t k = 0; k < 20; ++k) {
    const auto m = oracle::random_mdp(200 + k, 5, 3, 0.9);
    const auto p = random_policy(200 + k, 5, 3);
    const Matrix g = analytic_gradient(m, p, FeatureMap::identity(5), 0.0, EntropyKind::discounted);
    EXPECT_LT((g - oracle::pg_theorem_gradient(m, p.theta)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Gradient, RewardShiftLeavesGradientUnchanged) {
  for (std::uint64_t k = 0; k < 10; ++k) {
    auto m = oracle::random_mdp(300 + k, 5, 3, 0.9);
    const auto p = random_policy(300 + k, 5, 3);
    const auto f = FeatureMap::identity(5);
    for (auto kind : kKinds) {
      const Matrix before = analytic_gradient(m, p, f, 0.1, kind);
      TabularMdp shifted = m;
      shifted.reward.array() += 3.0;
      EXPECT_LT((analytic_gradient(shifted, p, f, 0.1, kind) - before).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Gradient, AliasedRowIsSumOfPerStateContributions) {
  const auto env = build({EnvName::aliased_counterexample, {}});
  const auto p = random_policy(5, 3, 2);
  // Untie the aliased states: the same logits, one row per state.
  SoftmaxPolicy untied{Matrix(4, 2)};
  for (int s = 0; s < 4; ++s) untied.theta.row(s) = p.theta.row(env.features(s));
  const auto id = FeatureMap::identity(4);
  for (auto kind : kKinds) {
    const Matrix shared = analytic_gradient(env.mdp, p, env.features, 0.1, kind);
    const Matrix per_state = analytic_gradient(env.mdp, untied, id, 0.1, kind);
    EXPECT_LT((shared.row(1) - (per_state.row(1) + per_state.row(2))).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(oracle::rel_inf_error(shared, finite_diff_gradient(env.mdp, p, env.features, 0.1, kind)), 1e-4);
  }
}

TEST(Gradient, UnreachableStatesAreExcludedFromEntropy) {
  // gridworld_slits has wall cells the agent can never reach.
  const auto env = build({EnvName::gridworld_slits, {}});
  const auto p = SoftmaxPolicy::uniform(121, 4);
  const auto parts = regularized_objective_parts(env.mdp, p, env.features, 0.1, EntropyKind::discounted);
  EXPECT_TRUE(std::isfinite(parts.H));
  EXPECT_TRUE(analytic_gradient(env.mdp, p, env.features, 0.1, EntropyKind::discounted).allFinite());
}

TEST(FiniteDiff, ExactForLinearFunctional) {
  // Every policy earns the same return, so central differences vanish.
  TabularMdp m = TabularMdp::zeros(1, 2, 0.9);
  m.row(0, 0)(0) = 1.0;
  m.row(0, 1)(0) = 1.0;
  m.reward << 1.0, 1.0;  // J = 10 for every policy
  const Matrix fd = finite_diff_gradient(m, random_policy(1, 1, 2), FeatureMap::identity(1), 0.0, EntropyKind::discounted);
  EXPECT_LT(fd.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FiniteDiff, HalvingStepShrinksErrorQuadratically) {
  const auto env = build({EnvName::two_state, {}});
  const auto p = random_policy(9, 2, 2);
  const Matrix exact = analytic_gradient(env.mdp, p, env.features, 0.1, EntropyKind::discounted);
  const double e1 = (finite_diff_gradient(env.mdp, p, env.features, 0.1, EntropyKind::discounted, 1e-2) - exact).cwiseAbs().maxCoeff();
  const double e2 = (finite_diff_gradient(env.mdp, p, env.features, 0.1, EntropyKind::discounted, 5e-3) - exact).cwiseAbs().maxCoeff();
  EXPECT_GT(e1 / e2, 3.0);
  EXPECT_LT(e1 / e2, 5.0);
}

TEST(RunExactPg, SmallStepsAscend) {
  const auto env = build({EnvName::two_state, {}});
  const auto tr = run_exact_pg(env.mdp, random_policy(4, 2, 2), env.features, 0.0, 0.01, 2000, EntropyKind::discounted);
  int up = 0;
  for (std::size_t k = 1; k < tr.records.size(); ++k) up += tr.records[k].J >= tr.records[k - 1].J;
  EXPECT_GE(double(up) / double(tr.records.size() - 1), 0.95);
}

TEST(RunExactPg, GridworldReachesNearOptimum) {
  // The default lr needs far more than 5000 iterations on this grid; a larger
  // step keeps the probe inside the iteration budget.
  const auto env = build({EnvName::gridworld_open, {}});
  const double j_star = env.mdp.alpha.dot(value_iteration(env.mdp, 1e-12).values);
  const auto tr = run_exact_pg(env.mdp, SoftmaxPolicy::uniform(16, 4), env.features, 0.1, 1.0, 5000,
                               EntropyKind::discounted);
  ASSERT_FALSE(tr.aborted) << tr.error;
  EXPECT_GE(tr.records.back().J, 0.95 * j_star);
}

TEST(RunExactPg, SingleIterationMovesByLrTimesGradient) {
  const auto env = build({EnvName::two_state, {}});
  const auto p0 = random_policy(6, 2, 2);
  const auto tr = run_exact_pg(env.mdp, p0, env.features, 0.1, 0.05, 1, EntropyKind::stationary);
  ASSERT_EQ(tr.records.size(), 1u);
  const Matrix g = analytic_gradient(env.mdp, p0, env.features, 0.1, EntropyKind::stationary);
  EXPECT_EQ(tr.final_policy.theta, Matrix(p0.theta + 0.05 * g));
  EXPECT_EQ(tr.records[0].theta_hash, hash_matrix(p0.theta));
}

TEST(RunExactPg, DeterministicAndFinite) {
  const auto env = build({EnvName::frozen_lake, {}});
  const auto a = run_exact_pg(env.mdp, SoftmaxPolicy::uniform(16, 4), env.features, 0.1, 0.5, 50, EntropyKind::discounted);
  const auto b = run_exact_pg(env.mdp, SoftmaxPolicy::uniform(16, 4), env.features, 0.1, 0.5, 50, EntropyKind::discounted);
  ASSERT_EQ(a.records.size(), 50u);
  for (std::size_t k = 0; k < 50; ++k) {
    EXPECT_EQ(a.records[k].iteration, int(k));
    EXPECT_EQ(a.records[k].theta_hash, b.records[k].theta_hash);
    EXPECT_EQ(a.records[k].J_tilde, b.records[k].J_tilde);
    EXPECT_TRUE(std::isfinite(a.records[k].J) && std::isfinite(a.records[k].H) && std::isfinite(a.records[k].grad_inf_norm));
  }
}

TEST(RunExactPg, NonFiniteObjectiveAbortsWithPartialTrace) {
  const auto env = build({EnvName::two_state, {}});
  const auto tr = run_exact_pg(env.mdp, SoftmaxPolicy::uniform(2, 2), env.features, 0.0, std::numeric_limits<double>::infinity(), 5,
                               EntropyKind::discounted);
  EXPECT_TRUE(tr.aborted);
  EXPECT_GE(tr.records.size(), 1u);
  EXPECT_LT(tr.records.size(), 5u);
  EXPECT_THROW(run_exact_pg(env.mdp, SoftmaxPolicy::uniform(2, 2), env.features, 0.0, 0.0, 5, EntropyKind::discounted),
               std::invalid_argument);
}
