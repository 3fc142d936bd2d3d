#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "slimnet/proplab.hpp"

namespace slimnet {
namespace {

// ---------------------------------------------------------------------------
// Independent oracle: dense grid search with window shrinking. Written
// against the objective definitions alone so the solvers are checked against
// something that shares none of their code.
// ---------------------------------------------------------------------------

double grid_minimize_1d(const std::function<double(double)>& f, double lo, double hi) {
  double center = 0.5 * (lo + hi), span = 0.5 * (hi - lo);
  double best_x = center, best = f(center);
  for (int round = 0; round < 60; ++round) {
    for (int i = 0; i <= 200; ++i) {
      const double x = center - span + 2.0 * span * i / 200.0;
      const double v = f(x);
      if (v < best) {
        best = v;
        best_x = x;
      }
    }
    center = best_x;
    span *= 0.25;
  }
  return best;
}

double grid_minimize_2d(const std::function<double(double, double)>& f, double lo, double hi) {
  double cx = 0.5 * (lo + hi), cy = cx, span = 0.5 * (hi - lo);
  double bx = cx, by = cy, best = f(cx, cy);
  for (int round = 0; round < 80; ++round) {
    for (int i = 0; i <= 40; ++i) {
      for (int j = 0; j <= 40; ++j) {
        const double x = cx - span + 2.0 * span * i / 40.0;
        const double y = cy - span + 2.0 * span * j / 40.0;
        const double v = f(x, y);
        if (v < best) {
          best = v;
          bx = x;
          by = y;
        }
      }
    }
    cx = bx;
    cy = by;
    span *= 0.45;
  }
  return best;
}

// Closed-form least squares A = Y X^T (X X^T)^{-1} for 2x2 Gram matrices.
Tensor least_squares_2x2(const Tensor& x, const Tensor& y) {
  const std::size_t n = 2, samples = x.extent(1), m = y.extent(0);
  double g00 = 0, g01 = 0, g11 = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    g00 += x.at({0, s}) * x.at({0, s});
    g01 += x.at({0, s}) * x.at({1, s});
    g11 += x.at({1, s}) * x.at({1, s});
  }
  const double det = g00 * g11 - g01 * g01;
  Tensor a({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double c0 = 0, c1 = 0;  // (Y X^T) row i
    for (std::size_t s = 0; s < samples; ++s) {
      c0 += y.at({i, s}) * x.at({0, s});
      c1 += y.at({i, s}) * x.at({1, s});
    }
    a.at({i, 0}) = (c0 * g11 - c1 * g01) / det;
    a.at({i, 1}) = (c1 * g00 - c0 * g01) / det;
  }
  return a;
}

double residual_sse(const Tensor& a, const Tensor& x, const Tensor& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.extent(0); ++i) {
    for (std::size_t s = 0; s < y.extent(1); ++s) {
      double pred = 0.0;
      for (std::size_t j = 0; j < x.extent(0); ++j) pred += a.at({i, j}) * x.at({j, s});
      const double r = y.at({i, s}) - pred;
      acc += r * r;
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Group-penalized solver
// ---------------------------------------------------------------------------

TEST(GroupLasso, ScalarSoftThresholdClosedForm) {
  // minimize (1 - a)^2 + 0.1 |a|: subgradient zero at a = 1 - 0.05 = 0.95,
  // objective 0.05^2 + 0.1 * 0.95 = 0.0975.
  GroupLassoProblem prob{Tensor::vector({1.0}), Tensor::vector({1.0}), 0.1};
  const GroupLassoSolution sol = solve_group_lasso(prob);
  EXPECT_NEAR(sol.objective, 0.0975, 1e-9);
  EXPECT_NEAR(sol.a[0], 0.95, 1e-6);
}

TEST(GroupLasso, MatchesDenseGridOn1D) {
  SeededRng rng(101);
  for (int inst = 0; inst < 4; ++inst) {
    Tensor x({1, 3}), y({1, 3});
    for (std::size_t i = 0; i < 3; ++i) {
      x.at({0, i}) = rng.uniform(-1.5, 1.5);
      y.at({0, i}) = rng.uniform(-1.5, 1.5);
    }
    const double lambda = rng.uniform(0.05, 0.5);
    const GroupLassoSolution sol = solve_group_lasso({x, y, lambda});
    const double oracle = grid_minimize_1d(
        [&](double a) {
          double acc = lambda * std::abs(a);
          for (std::size_t s = 0; s < 3; ++s) {
            const double r = y.at({0, s}) - a * x.at({0, s});
            acc += r * r;
          }
          return acc;
        },
        -6.0, 6.0);
    EXPECT_NEAR(sol.objective, oracle, 1e-6) << "instance " << inst;
    EXPECT_GE(sol.objective, oracle - 1e-9) << "solver cannot beat the global minimum";
  }
}

TEST(GroupLasso, MatchesDenseGridOn2D) {
  SeededRng rng(202);
  // Row shape [1, 2]: two scalar groups, i.e. a plain lasso in two variables.
  for (int inst = 0; inst < 3; ++inst) {
    Tensor x({2, 3}), y({1, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.5, 1.5);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.uniform(-1.5, 1.5);
    const double lambda = rng.uniform(0.05, 0.5);
    const GroupLassoSolution sol = solve_group_lasso({x, y, lambda});
    const double oracle = grid_minimize_2d(
        [&](double a0, double a1) {
          double acc = lambda * (std::abs(a0) + std::abs(a1));
          for (std::size_t s = 0; s < 3; ++s) {
            const double r = y.at({0, s}) - a0 * x.at({0, s}) - a1 * x.at({1, s});
            acc += r * r;
          }
          return acc;
        },
        -6.0, 6.0);
    EXPECT_NEAR(sol.objective, oracle, 1e-6) << "row instance " << inst;
  }
  // Column shape [2, 1]: one true two-element group under the Euclidean norm.
  for (int inst = 0; inst < 3; ++inst) {
    Tensor x({1, 3}), y({2, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.5, 1.5);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.uniform(-1.5, 1.5);
    const double lambda = rng.uniform(0.05, 0.5);
    const GroupLassoSolution sol = solve_group_lasso({x, y, lambda});
    const double oracle = grid_minimize_2d(
        [&](double a0, double a1) {
          double acc = lambda * std::sqrt(a0 * a0 + a1 * a1);
          for (std::size_t s = 0; s < 3; ++s) {
            const double r0 = y.at({0, s}) - a0 * x.at({0, s});
            const double r1 = y.at({1, s}) - a1 * x.at({0, s});
            acc += r0 * r0 + r1 * r1;
          }
          return acc;
        },
        -6.0, 6.0);
    EXPECT_NEAR(sol.objective, oracle, 1e-6) << "column instance " << inst;
  }
}

TEST(GroupLasso, LambdaZeroIsLeastSquares) {
  SeededRng rng(303);
  Tensor x({2, 3}), y({2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  const GroupLassoSolution sol = solve_group_lasso({x, y, 0.0});
  const Tensor ls = least_squares_2x2(x, y);
  EXPECT_NEAR(sol.objective, residual_sse(ls, x, y), 1e-8);
}

TEST(GroupLasso, HugeLambdaShrinksToZero) {
  SeededRng rng(404);
  Tensor x({2, 3}), y({2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  const GroupLassoSolution sol = solve_group_lasso({x, y, 1e3});
  for (std::size_t i = 0; i < sol.a.size(); ++i) EXPECT_EQ(sol.a[i], 0.0);
  double y_sq = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) y_sq += y[i] * y[i];
  EXPECT_DOUBLE_EQ(sol.objective, y_sq);
}

TEST(GroupLasso, RefusesBadInputs) {
  const Tensor ok = Tensor::vector({1.0});
  EXPECT_THROW(solve_group_lasso({ok, ok, -0.1}), ArgumentError);
  EXPECT_THROW(solve_group_lasso({Tensor({2, 2, 2}), ok, 0.1}), DimensionError);
  EXPECT_THROW(solve_group_lasso({Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(1, 3, {1, 2, 3}), 0.1}),
               DimensionError);
  EXPECT_THROW(solve_group_lasso({Tensor({17, 2}), Tensor({1, 2}), 0.1}), ArgumentError);
  SolverOptions opts;
  opts.restarts = 0;
  EXPECT_THROW(solve_group_lasso({ok, ok, 0.1}, opts), ArgumentError);
}

TEST(GroupLasso, NonconvergenceIsReported) {
  SeededRng rng(505);
  Tensor x({2, 3}), y({2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  SolverOptions opts;
  opts.max_iters = 1;
  opts.tol = 1e-300;
  try {
    solve_group_lasso({x, y, 0.1}, opts);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("relative change"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Factored solver
// ---------------------------------------------------------------------------

TEST(SwitchPenalty, UnregularizedReachesLeastSquares) {
  SeededRng rng(606);
  Tensor x({2, 3}), y({2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  const SwitchPenaltySolution sol = solve_switch_penalty({x, y, 0.0, 0.0, 2.0, false});
  const double ls = residual_sse(least_squares_2x2(x, y), x, y);
  EXPECT_NEAR(sol.objective, ls, 1e-6);
  EXPECT_GE(sol.objective, ls - 1e-9);
}

TEST(SwitchPenalty, ConstrainedScalarMatchesGroupObjective) {
  // With |a| = 1 the product a*beta ranges over all reals via beta, so the
  // constrained minimum must equal the scalar group-lasso value 0.0975.
  const SwitchPenaltySolution sol =
      solve_switch_penalty({Tensor::vector({1.0}), Tensor::vector({1.0}), 0.1, 0.0, 2.0, true});
  EXPECT_NEAR(sol.objective, 0.0975, 1e-4);
  EXPECT_NEAR(std::abs(sol.a[0]), 1.0, 1e-12);
}

TEST(SwitchPenalty, RejectsBadExponent) {
  const Tensor t = Tensor::vector({1.0});
  EXPECT_THROW(solve_switch_penalty({t, t, 0.1, 0.1, 0.5, false}), ArgumentError);
  EXPECT_THROW(solve_switch_penalty({t, t, 0.1, 0.1, 3.0, false}), ArgumentError);
  EXPECT_THROW(solve_switch_penalty({t, t, 0.1, -0.1, 2.0, false}), ArgumentError);
}

// ---------------------------------------------------------------------------
// Equivalence of the two problems
// ---------------------------------------------------------------------------

TEST(Equivalence, TenSeededInstancesAgree) {
  const EquivalenceReport report = verify_equivalence(11, 0.3, 10);
  EXPECT_TRUE(report.pass);
  ASSERT_EQ(report.trials.size(), 10u);
  for (const EquivalenceTrial& t : report.trials) {
    EXPECT_TRUE(t.pass) << "trial " << t.index << " gap " << t.objective_gap;
    EXPECT_LT(t.mapping_gap, 1e-9) << "the constructive mapping is an identity";
    EXPECT_LT(t.worst_unit_gap, 1e-12);
    EXPECT_LE(t.objective_gap, 1e-3);
  }
}

TEST(Equivalence, ZeroTargetsGiveZeroMinimum) {
  SeededRng rng(707);
  Tensor x({2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  const EquivalenceTrial t = check_equivalence(x, Tensor({2, 3}), 0.4);
  EXPECT_NEAR(t.group_objective, 0.0, 1e-10);
  EXPECT_NEAR(t.factored_objective, 0.0, 1e-3);
  EXPECT_TRUE(t.pass);
}

TEST(Equivalence, LambdaZeroBothReachLeastSquares) {
  SeededRng rng(808);
  Tensor x({2, 3}), y({2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  const EquivalenceTrial t = check_equivalence(x, y, 0.0);
  EXPECT_NEAR(t.group_objective, residual_sse(least_squares_2x2(x, y), x, y), 1e-6);
  EXPECT_TRUE(t.pass);
}

// ---------------------------------------------------------------------------
// Non-convexity witness
// ---------------------------------------------------------------------------

TEST(Nonconvexity, MidpointViolation) {
  const NonconvexityReport report = nonconvexity_witness({1.0, 2.0});
  EXPECT_TRUE(report.pass);
  ASSERT_EQ(report.cases.size(), 2u);
  EXPECT_EQ(report.cases[0].f_s1, 0.0);
  EXPECT_EQ(report.cases[0].f_s2, 0.0);
  EXPECT_EQ(report.cases[0].f_mid, 1.0);
  EXPECT_EQ(report.cases[1].f_mid, 4.0);
  EXPECT_TRUE(nonconvexity_witness({0.5}).pass);
  EXPECT_THROW(nonconvexity_witness({0.0}), ArgumentError);
  EXPECT_THROW(nonconvexity_witness({}), ArgumentError);
}

// ---------------------------------------------------------------------------
// Scaling orbit
// ---------------------------------------------------------------------------

SwitchPenaltyProblem scaling_instance(double lambda, double lambda2, double p) {
  SeededRng rng(909);
  Tensor x({2, 3}), y({2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  return SwitchPenaltyProblem{x, y, lambda, lambda2, p, false};
}

TEST(Scaling, NoMinimumWithoutWeightPenalty) {
  const SwitchPenaltyProblem prob = scaling_instance(0.5, 0.0, 2.0);
  const Tensor a0 = Tensor::matrix(2, 2, {0.7, -1.2, 0.4, 0.9});
  const Tensor b0 = Tensor::vector({1.5, 2.5});
  const ScalingReport report = scaling_orbit(prob, a0, b0, 16);
  EXPECT_TRUE(report.strictly_decreasing);
  EXPECT_EQ(report.first_increase, -1);
  EXPECT_TRUE(report.bounded_below_by_fit);
  ASSERT_EQ(report.objectives.size(), 16u);
  // Doubling A and halving beta keeps the product bit-identical, so the
  // objective is exactly fit + lambda * |b0|_1 / 2^t.
  for (std::size_t t = 0; t < report.objectives.size(); ++t) {
    const double expected = report.fit_term + 0.5 * 4.0 / std::pow(2.0, double(t));
    EXPECT_NEAR(report.objectives[t], expected, 1e-12) << "step " << t;
  }
}

TEST(Scaling, WeightPenaltyRestoresMinimum) {
  const Tensor a0 = Tensor::matrix(2, 2, {0.7, -1.2, 0.4, 0.9});
  const Tensor b0 = Tensor::vector({1.5, 2.5});
  for (double p : {1.0, 2.0}) {
    const SwitchPenaltyProblem prob = scaling_instance(0.5, 0.05, p);
    const ScalingReport report = scaling_orbit(prob, a0, b0, 16);
    EXPECT_GE(report.first_increase, 0) << "p " << p;
    EXPECT_TRUE(report.increasing_after_first) << "p " << p;
    EXPECT_GT(report.objectives.back(), report.objectives.front()) << "p " << p;
  }
  EXPECT_THROW(scaling_orbit(scaling_instance(0.5, 0.0, 2.0), a0, b0, 1), ArgumentError);
}

// ---------------------------------------------------------------------------
// Sign-flip symmetry
// ---------------------------------------------------------------------------

struct FlipFixture {
  Network net;
  Tensor inputs;
  Tensor targets;
  PenaltyConfig penalty{0.01, 1e-3, 2.0};
};

FlipFixture mlp_fixture(std::uint64_t seed) {
  SeededRng rng(seed);
  FlipFixture f;
  f.net = Network({6}, {LinearLayer::random(4, 6, rng), SwitchLayer::random(4, rng),
                        LinearLayer::random(3, 4, rng)});
  f.inputs = Tensor({8, 6});
  f.targets = Tensor({8, 3});
  for (std::size_t i = 0; i < f.inputs.size(); ++i) f.inputs[i] = rng.normal();
  for (std::size_t i = 0; i < f.targets.size(); ++i) f.targets[i] = rng.normal();
  return f;
}

TEST(SignFlip, SingleFlipIsExact) {
  FlipFixture f = mlp_fixture(21);
  const SignFlipReport report =
      signflip_check(f.net, 1, {1}, f.inputs, f.targets, f.penalty, false);
  ASSERT_EQ(report.cases.size(), 1u);
  EXPECT_EQ(report.cases[0].output_gap, 0.0);
  EXPECT_EQ(report.cases[0].objective_gap, 0.0);
  EXPECT_TRUE(report.pass);
  EXPECT_EQ(report.consumer_index, 2u);
  EXPECT_EQ(report.block, 1u);
}

TEST(SignFlip, ExhaustiveOrbitHasZeroSpread) {
  FlipFixture f = mlp_fixture(22);
  const SignFlipReport report =
      signflip_check(f.net, 1, {0, 1, 2, 3}, f.inputs, f.targets, f.penalty, true);
  ASSERT_EQ(report.cases.size(), 16u);
  EXPECT_EQ(report.output_spread, 0.0);
  EXPECT_EQ(report.objective_spread, 0.0);
  EXPECT_TRUE(report.pass);
}

TEST(SignFlip, EmptyFlipSetIsIdentity) {
  FlipFixture f = mlp_fixture(23);
  const SignFlipReport report = signflip_check(f.net, 1, {}, f.inputs, f.targets, f.penalty, true);
  ASSERT_EQ(report.cases.size(), 1u);
  EXPECT_TRUE(report.cases[0].channels.empty());
  EXPECT_TRUE(report.pass);
}

TEST(SignFlip, FlattenCrossingNegatesColumnBlocks) {
  SeededRng rng(24);
  Network net({1, 4, 4}, {Conv2dLayer::random(3, 1, 3, 3, 1, 1, rng), SwitchLayer::random(3, rng),
                          FlattenLayer{}, LinearLayer::random(2, 48, rng)});
  Tensor inputs({5, 1, 4, 4}), targets({5, 2});
  for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i] = rng.normal();
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = rng.normal();
  PenaltyConfig penalty{0.02, 1e-4, 2.0};
  const SignFlipReport report = signflip_check(net, 1, {0, 2}, inputs, targets, penalty, true);
  EXPECT_EQ(report.block, 16u);
  EXPECT_EQ(report.consumer_index, 3u);
  ASSERT_EQ(report.cases.size(), 4u);
  EXPECT_EQ(report.output_spread, 0.0);
  EXPECT_EQ(report.objective_spread, 0.0);
  EXPECT_TRUE(report.pass);
}

TEST(SignFlip, ConvConsumerNegatesInputSlices) {
  SeededRng rng(25);
  Network net({2, 4, 4},
              {Conv2dLayer::random(3, 2, 3, 3, 1, 1, rng), SwitchLayer::random(3, rng),
               Conv2dLayer::random(2, 3, 3, 3, 1, 1, rng), FlattenLayer{},
               LinearLayer::random(2, 32, rng)});
  Tensor inputs({4, 2, 4, 4}), targets({4, 2});
  for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i] = rng.normal();
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = rng.normal();
  PenaltyConfig penalty{0.02, 1e-4, 2.0};
  const SignFlipReport report =
      signflip_check(net, 1, {0, 1, 2}, inputs, targets, penalty, true);
  EXPECT_EQ(report.consumer_index, 2u);
  ASSERT_EQ(report.cases.size(), 8u);
  EXPECT_EQ(report.output_spread, 0.0);
  EXPECT_TRUE(report.pass);
}

TEST(SignFlip, RefusesMediatedOrMissingConsumers) {
  SeededRng rng(26);
  FlipFixture f = mlp_fixture(26);
  // Nonlinearity between the switch and its consumer breaks the cancellation.
  Network relu_net({6}, {LinearLayer::random(4, 6, rng), SwitchLayer::random(4, rng), ReluLayer{},
                         LinearLayer::random(3, 4, rng)});
  EXPECT_THROW(signflip_check(relu_net, 1, {0}, f.inputs, f.targets, f.penalty), StateError);
  // A switch that feeds the output has no consumer weights to compensate.
  Network tail_net({6}, {LinearLayer::random(4, 6, rng), SwitchLayer::random(4, rng)});
  EXPECT_THROW(signflip_check(tail_net, 1, {0}, f.inputs, f.targets, f.penalty), StateError);
  // Argument validation.
  EXPECT_THROW(signflip_check(f.net, 0, {0}, f.inputs, f.targets, f.penalty), ArgumentError);
  EXPECT_THROW(signflip_check(f.net, 9, {0}, f.inputs, f.targets, f.penalty), ArgumentError);
  EXPECT_THROW(signflip_check(f.net, 1, {7}, f.inputs, f.targets, f.penalty), ArgumentError);
  EXPECT_THROW(signflip_check(f.net, 1, {1, 1}, f.inputs, f.targets, f.penalty), ArgumentError);
}

// ---------------------------------------------------------------------------
// One-call runners
// ---------------------------------------------------------------------------

TEST(Propositions, AllFourPass) {
  const std::vector<PropOutcome> outcomes = run_all_propositions(0, 10);
  ASSERT_EQ(outcomes.size(), 4u);
  for (const PropOutcome& o : outcomes) {
    EXPECT_TRUE(o.pass) << "proposition " << o.prop << " (" << o.name << ")";
    EXPECT_FALSE(o.name.empty());
    EXPECT_FALSE(o.notes.empty());
  }
  EXPECT_THROW(run_proposition(0), ArgumentError);
  EXPECT_THROW(run_proposition(5), ArgumentError);
}

}  // namespace
}  // namespace slimnet
