#pragma once

// Desk-scale numerical studies of the optimization problem behind switch
// training. Four facts are checked on small instances:
//
//   1. Column-group-penalized least squares and the switch-factored problem
//      with unit-norm columns reach the same minimum, via the constructive
//      mapping beta_j = |col_j(A)|_2, A' = A with columns normalized.
//   2. The factored fit |y - A diag(beta) x|^2 is not jointly convex.
//   3. Without a weight penalty the factored objective has no minimum: the
//      orbit (2^t A, beta / 2^t) keeps descending. A lambda2 |A|_p^p term
//      restores one (the orbit eventually climbs).
//   4. Negating beta_j together with the consumer column it feeds leaves both
//      the network output and the full objective unchanged, so minima come in
//      2^k-orbits.
//
// Solvers here are deliberately simple (proximal gradient with fixed 1/L
// steps and random restarts) and are only meant for instances a few units
// wide; they refuse anything larger.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "slimnet/errors.hpp"
#include "slimnet/layers.hpp"
#include "slimnet/objective.hpp"
#include "slimnet/switch_layer.hpp"
#include "slimnet/tensor.hpp"

namespace slimnet {

// Least squares with a column-group penalty:
//   minimize_A  |y - A x|_F^2 + lambda * sum_j |col_j(A)|_2
// x holds one sample per column ([n, N]); y holds the targets ([m, N]); the
// unknown A is [m, n]. Rank-1 x / y are treated as a single column.
struct GroupLassoProblem {
  Tensor x;
  Tensor y;
  double lambda = 0.0;
};

// The switch-factored counterpart:
//   minimize_{A, beta}  |y - A diag(beta) x|_F^2 + lambda |beta|_1
//                       + lambda2 |A|_p^p
// with an optional |col_j(A)|_2 = 1 constraint (the form that matches the
// group problem exactly).
struct SwitchPenaltyProblem {
  Tensor x;
  Tensor y;
  double lambda = 0.0;
  double lambda2 = 0.0;
  double p = 2.0;
  bool unit_columns = false;
};

struct SolverOptions {
  int restarts = 10;
  std::size_t max_iters = 100000;
  double tol = 1e-10;  // stop when the relative objective change falls below
  std::uint64_t seed = 0;
};

namespace detail {

// Solvers are meant for instances a few units wide; refuse anything bigger so
// a misuse fails loudly rather than spinning.
inline constexpr std::size_t kDeskLimit = 16;

inline Tensor as_columns(const Tensor& t, const char* what) {
  if (t.rank() == 1) return Tensor({t.size(), 1}, std::vector<double>(t.values()));
  if (t.rank() == 2) return t;
  throw DimensionError(std::string(what) + " must be rank 1 or 2, got " +
                       shape_string(t.shape()));
}

struct ProblemData {
  Tensor x;  // [n, N]
  Tensor y;  // [m, N]
  std::size_t m, n, samples;
};

inline ProblemData check_problem(const Tensor& x, const Tensor& y, double lambda) {
  ProblemData d;
  d.x = as_columns(x, "features");
  d.y = as_columns(y, "targets");
  d.n = d.x.extent(0);
  d.m = d.y.extent(0);
  d.samples = d.x.extent(1);
  if (d.y.extent(1) != d.samples) {
    throw DimensionError("features carry " + std::to_string(d.samples) + " samples but targets " +
                         std::to_string(d.y.extent(1)));
  }
  if (d.m == 0 || d.n == 0 || d.samples == 0) {
    throw ArgumentError("problem must have at least one feature, target row, and sample");
  }
  if (d.m > kDeskLimit || d.n > kDeskLimit || d.samples > kDeskLimit) {
    throw ArgumentError("solvers are desk-scale only; dimensions are capped at " +
                        std::to_string(kDeskLimit));
  }
  if (lambda < 0.0) throw ArgumentError("lambda must be nonnegative");
  return d;
}

// Largest eigenvalue of X X^T by power iteration (symmetric PSD, so the
// all-ones start only fails on an exact orthogonal start; perturbation-free
// determinism matters more here).
inline double gram_lambda_max(const Tensor& x) {
  const std::size_t n = x.extent(0), cols = x.extent(1);
  std::vector<double> gram(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (std::size_t s = 0; s < cols; ++s) acc += x.at({i, s}) * x.at({j, s});
      gram[i * n + j] = acc;
      gram[j * n + i] = acc;
    }
  }
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double eig = 0.0;
  for (int it = 0; it < 200; ++it) {
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) w[i] += gram[i * n + j] * v[j];
    }
    double norm = 0.0;
    for (double wi : w) norm += wi * wi;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    eig = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = w[i] / norm;
      eig += v[i] * w[i];
    }
  }
  return eig;
}

inline double fit_sse(const Tensor& a, const std::vector<double>& beta, const ProblemData& d) {
  // |y - A diag(beta) x|_F^2; an empty beta means the plain product A x.
  double acc = 0.0;
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t s = 0; s < d.samples; ++s) {
      double pred = 0.0;
      for (std::size_t j = 0; j < d.n; ++j) {
        const double scale = beta.empty() ? 1.0 : beta[j];
        pred += a.at({i, j}) * scale * d.x.at({j, s});
      }
      const double r = d.y.at({i, s}) - pred;
      acc += r * r;
    }
  }
  return acc;
}

inline double column_norm(const Tensor& a, std::size_t j) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.extent(0); ++i) acc += a.at({i, j}) * a.at({i, j});
  return std::sqrt(acc);
}

inline double group_objective(const Tensor& a, const ProblemData& d, double lambda) {
  double obj = fit_sse(a, {}, d);
  for (std::size_t j = 0; j < d.n; ++j) obj += lambda * column_norm(a, j);
  return obj;
}

inline void check_options(const SolverOptions& opts) {
  if (opts.restarts < 1) throw ArgumentError("solver needs at least one restart");
  if (opts.max_iters == 0) throw ArgumentError("solver needs at least one iteration");
  if (!(opts.tol > 0.0)) throw ArgumentError("solver tolerance must be positive");
}

}  // namespace detail

struct GroupLassoSolution {
  Tensor a;  // [m, n]
  double objective = 0.0;
  std::size_t iterations = 0;  // of the restart that produced `a`
};

// Proximal gradient on the column-group problem: gradient step on the fit at
// the fixed step 1/L (L = 2 lambda_max(X X^T)), then block soft-thresholding
// of each column. The objective is convex, so restarts only guard against
// numerical ties.
inline GroupLassoSolution solve_group_lasso(const GroupLassoProblem& prob,
                                            const SolverOptions& opts = {}) {
  detail::check_options(opts);
  const detail::ProblemData d = detail::check_problem(prob.x, prob.y, prob.lambda);

  const double lip = 2.0 * detail::gram_lambda_max(d.x);
  GroupLassoSolution best;
  if (lip == 0.0) {
    // x == 0: the fit is constant, so the penalty alone decides and A = 0.
    best.a = Tensor({d.m, d.n});
    best.objective = detail::group_objective(best.a, d, prob.lambda);
    return best;
  }
  const double step = 1.0 / lip;

  bool have = false;
  double last_change = 0.0;
  SeededRng root(opts.seed);
  for (int r = 0; r < opts.restarts; ++r) {
    SeededRng rng = root.split(static_cast<std::uint64_t>(r));
    Tensor a({d.m, d.n});
    if (r > 0) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.5 * rng.normal();
    }
    double prev = detail::group_objective(a, d, prob.lambda);
    bool converged = false;
    std::size_t it = 0;
    for (; it < opts.max_iters; ++it) {
      // residual R = A x - y, gradient of the fit = 2 R x^T
      Tensor next = a;
      for (std::size_t i = 0; i < d.m; ++i) {
        for (std::size_t j = 0; j < d.n; ++j) {
          double g = 0.0;
          for (std::size_t s = 0; s < d.samples; ++s) {
            double pred = 0.0;
            for (std::size_t k = 0; k < d.n; ++k) pred += a.at({i, k}) * d.x.at({k, s});
            g += 2.0 * (pred - d.y.at({i, s})) * d.x.at({j, s});
          }
          next.at({i, j}) = a.at({i, j}) - step * g;
        }
      }
      for (std::size_t j = 0; j < d.n; ++j) {
        const double norm = detail::column_norm(next, j);
        const double scale = norm > step * prob.lambda ? 1.0 - step * prob.lambda / norm : 0.0;
        for (std::size_t i = 0; i < d.m; ++i) next.at({i, j}) *= scale;
      }
      a = std::move(next);
      const double obj = detail::group_objective(a, d, prob.lambda);
      last_change = std::abs(prev - obj) / std::max(1.0, std::abs(prev));
      if (last_change <= opts.tol) {
        converged = true;
        ++it;
        break;
      }
      prev = obj;
    }
    if (!converged) continue;
    const double obj = detail::group_objective(a, d, prob.lambda);
    if (!have || obj < best.objective) {
      have = true;
      best.a = std::move(a);
      best.objective = obj;
      best.iterations = it;
    }
  }
  if (!have) {
    throw ConvergenceError("group-lasso solver: no restart converged within " +
                           std::to_string(opts.max_iters) +
                           " iterations; last relative change " + std::to_string(last_change));
  }
  return best;
}

struct SwitchPenaltySolution {
  Tensor a;     // [m, n]
  Tensor beta;  // [n]
  double objective = 0.0;
  std::size_t iterations = 0;
};

inline double switch_penalty_objective(const Tensor& a, const Tensor& beta,
                                 const SwitchPenaltyProblem& prob) {
  const detail::ProblemData d = detail::check_problem(prob.x, prob.y, prob.lambda);
  if (beta.rank() != 1 || beta.size() != d.n || a.rank() != 2 || a.extent(0) != d.m ||
      a.extent(1) != d.n) {
    throw DimensionError("factored point " + shape_string(a.shape()) + " / " +
                         shape_string(beta.shape()) + " does not match the problem");
  }
  double obj = detail::fit_sse(a, beta.values(), d);
  obj += prob.lambda * norm_p(beta, 1.0);
  if (prob.lambda2 > 0.0) obj += prob.lambda2 * norm_p(a, prob.p);
  return obj;
}

// Alternating proximal descent on the factored problem: a soft-thresholded
// gradient step on beta, a gradient (p = 2) or soft-thresholded (p = 1) step
// on A, then column renormalization when the unit-column constraint is on
// (the norm moves into beta, so the renormalization never raises the
// objective). Nonconvex, hence the random restarts.
inline SwitchPenaltySolution solve_switch_penalty(const SwitchPenaltyProblem& prob,
                                       const SolverOptions& opts = {}) {
  detail::check_options(opts);
  const detail::ProblemData d = detail::check_problem(prob.x, prob.y, prob.lambda);
  if (prob.lambda2 < 0.0) throw ArgumentError("lambda2 must be nonnegative");
  if (prob.lambda2 > 0.0 && prob.p != 1.0 && prob.p != 2.0) {
    throw ArgumentError("weight-norm exponent must be 1 or 2, got " + std::to_string(prob.p));
  }

  const double gram_max = detail::gram_lambda_max(d.x);
  SeededRng root(opts.seed);
  SwitchPenaltySolution best;
  bool have = false;
  double last_change = 0.0;

  for (int r = 0; r < opts.restarts; ++r) {
    SeededRng rng = root.split(static_cast<std::uint64_t>(r));
    Tensor a({d.m, d.n});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.normal();
    std::vector<double> beta(d.n);
    for (double& b : beta) b = rng.normal();

    // Plain projection onto the unit sphere per column. The norm must NOT be
    // folded into beta here: doing so re-inflates beta right after its prox
    // step and the iteration settles on the unregularized product instead of
    // the constrained optimum.
    auto renormalize = [&] {
      if (!prob.unit_columns) return;
      for (std::size_t j = 0; j < d.n; ++j) {
        const double norm = detail::column_norm(a, j);
        if (norm > 0.0) {
          for (std::size_t i = 0; i < d.m; ++i) a.at({i, j}) /= norm;
        } else {
          // A dead column contributes nothing to the fit; park it on a unit
          // basis vector and drop its switch to keep the constraint honest.
          beta[j] = 0.0;
          a.at({0, j}) = 1.0;
        }
      }
    };
    renormalize();

    auto objective = [&] {
      double obj = detail::fit_sse(a, beta, d) + prob.lambda * [&] {
        double l1 = 0.0;
        for (double b : beta) l1 += std::abs(b);
        return l1;
      }();
      if (prob.lambda2 > 0.0) obj += prob.lambda2 * norm_p(a, prob.p);
      return obj;
    };

    double prev = objective();
    bool converged = false;
    std::size_t it = 0;
    for (; it < opts.max_iters; ++it) {
      // beta step: prox of lambda |beta|_1 around a fit-gradient step.
      double a_sq = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) a_sq += a[i] * a[i];
      const double lip_beta = 2.0 * std::max(a_sq, 1e-12) * std::max(gram_max, 1e-12);
      const double tb = 1.0 / lip_beta;
      std::vector<double> grad_beta(d.n, 0.0);
      for (std::size_t s = 0; s < d.samples; ++s) {
        for (std::size_t i = 0; i < d.m; ++i) {
          double pred = 0.0;
          for (std::size_t k = 0; k < d.n; ++k) pred += a.at({i, k}) * beta[k] * d.x.at({k, s});
          const double r2 = pred - d.y.at({i, s});
          for (std::size_t j = 0; j < d.n; ++j) {
            grad_beta[j] += 2.0 * r2 * a.at({i, j}) * d.x.at({j, s});
          }
        }
      }
      for (std::size_t j = 0; j < d.n; ++j) {
        const double z = beta[j] - tb * grad_beta[j];
        const double thr = tb * prob.lambda;
        beta[j] = z > thr ? z - thr : (z < -thr ? z + thr : 0.0);
      }

      // A step with beta fixed.
      double beta_sq_max = 0.0;
      for (double b : beta) beta_sq_max = std::max(beta_sq_max, b * b);
      double lip_a = 2.0 * std::max(beta_sq_max, 1e-12) * std::max(gram_max, 1e-12);
      if (prob.lambda2 > 0.0 && prob.p == 2.0) lip_a += 2.0 * prob.lambda2;
      const double ta = 1.0 / lip_a;
      Tensor next = a;
      for (std::size_t i = 0; i < d.m; ++i) {
        for (std::size_t j = 0; j < d.n; ++j) {
          double g = 0.0;
          for (std::size_t s = 0; s < d.samples; ++s) {
            double pred = 0.0;
            for (std::size_t k = 0; k < d.n; ++k) pred += a.at({i, k}) * beta[k] * d.x.at({k, s});
            g += 2.0 * (pred - d.y.at({i, s})) * beta[j] * d.x.at({j, s});
          }
          if (prob.lambda2 > 0.0 && prob.p == 2.0) g += 2.0 * prob.lambda2 * a.at({i, j});
          next.at({i, j}) = a.at({i, j}) - ta * g;
        }
      }
      if (prob.lambda2 > 0.0 && prob.p == 1.0) {
        const double thr = ta * prob.lambda2;
        for (std::size_t i = 0; i < next.size(); ++i) {
          next[i] = next[i] > thr ? next[i] - thr : (next[i] < -thr ? next[i] + thr : 0.0);
        }
      }
      a = std::move(next);
      renormalize();

      const double obj = objective();
      last_change = std::abs(prev - obj) / std::max(1.0, std::abs(prev));
      if (last_change <= opts.tol) {
        converged = true;
        ++it;
        break;
      }
      prev = obj;
    }
    if (!converged) continue;
    const double obj = objective();
    if (!have || obj < best.objective) {
      have = true;
      best.a = a;
      best.beta = Tensor::vector(beta);
      best.objective = obj;
      best.iterations = it;
    }
  }
  if (!have) {
    throw ConvergenceError("factored solver: no restart converged within " +
                           std::to_string(opts.max_iters) +
                           " iterations; last relative change " + std::to_string(last_change));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Equivalence of the two problems (constructive mapping + dual-solver match)
// ---------------------------------------------------------------------------

struct EquivalenceTrial {
  std::uint64_t index = 0;
  double group_objective = 0.0;
  double mapped_objective = 0.0;    // factored objective at the constructed point
  double mapping_gap = 0.0;         // |mapped - group|, exact identity up to rounding
  double worst_unit_gap = 0.0;      // max_j | |col_j(A')| - 1 |
  double factored_objective = 0.0;  // best constrained solve from random restarts
  double objective_gap = 0.0;       // |factored - group|
  bool pass = false;
};

struct EquivalenceReport {
  double lambda = 0.0;
  double tolerance = 0.0;
  std::vector<EquivalenceTrial> trials;
  bool pass = false;
};

// One instance: solve the group problem, rebuild the factored point via
// beta_j = |col_j(A*)|, A' = columns normalized, and check (a) the objective
// identity of the mapping, (b) the unit-column constraint, (c) that the
// factored solver independently reaches the same minimum within `tolerance`.
inline EquivalenceTrial check_equivalence(const Tensor& x, const Tensor& y, double lambda,
                                          double tolerance = 1e-3,
                                          const SolverOptions& opts = {}) {
  EquivalenceTrial t;
  GroupLassoProblem gp{x, y, lambda};
  const GroupLassoSolution gs = solve_group_lasso(gp, opts);
  t.group_objective = gs.objective;

  const detail::ProblemData d = detail::check_problem(x, y, lambda);
  Tensor mapped = gs.a;
  std::vector<double> beta(d.n, 0.0);
  for (std::size_t j = 0; j < d.n; ++j) {
    const double norm = detail::column_norm(mapped, j);
    beta[j] = norm;
    if (norm > 0.0) {
      for (std::size_t i = 0; i < d.m; ++i) mapped.at({i, j}) /= norm;
    } else {
      mapped.at({0, j}) = 1.0;  // free unit direction; beta_j = 0 silences it
    }
    t.worst_unit_gap =
        std::max(t.worst_unit_gap, std::abs(detail::column_norm(mapped, j) - 1.0));
  }
  SwitchPenaltyProblem sp{x, y, lambda, 0.0, 2.0, true};
  t.mapped_objective = switch_penalty_objective(mapped, Tensor::vector(beta), sp);
  t.mapping_gap = std::abs(t.mapped_objective - t.group_objective);

  const SwitchPenaltySolution ss = solve_switch_penalty(sp, opts);
  t.factored_objective = ss.objective;
  t.objective_gap = std::abs(ss.objective - gs.objective);

  t.pass = t.objective_gap <= tolerance && t.mapping_gap <= tolerance &&
           t.worst_unit_gap <= 1e-9;
  return t;
}

// Random square instances (2x2 maps, 3 samples) drawn per trial from
// split(seed, trial); every trial must agree within `tolerance`.
inline EquivalenceReport verify_equivalence(std::uint64_t seed, double lambda, int trials,
                                            double tolerance = 1e-3) {
  if (trials < 1) throw ArgumentError("equivalence check needs at least one trial");
  EquivalenceReport report;
  report.lambda = lambda;
  report.tolerance = tolerance;
  report.pass = true;
  SeededRng root(seed);
  for (int i = 0; i < trials; ++i) {
    SeededRng rng = root.split(static_cast<std::uint64_t>(i));
    Tensor x({2, 3}), y({2, 3});
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = rng.normal();
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = rng.normal();
    SolverOptions opts;
    opts.seed = seed + static_cast<std::uint64_t>(i) + 1;
    EquivalenceTrial t = check_equivalence(x, y, lambda, tolerance, opts);
    t.index = static_cast<std::uint64_t>(i);
    report.pass = report.pass && t.pass;
    report.trials.push_back(std::move(t));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Non-convexity witness
// ---------------------------------------------------------------------------

struct NonconvexityCase {
  double x = 0.0;
  double f_s1 = 0.0;  // f(0, 2)
  double f_s2 = 0.0;  // f(2, 0)
  double f_mid = 0.0;  // f(1, 1)
  bool pass = false;
};

struct NonconvexityReport {
  std::vector<NonconvexityCase> cases;
  bool pass = false;
};

// f(a, beta) = (y - a beta x)^2 with y = 0 vanishes at (0, 2) and (2, 0) but
// equals x^2 > 0 at their midpoint (1, 1) — a direct convexity violation.
inline NonconvexityReport nonconvexity_witness(const std::vector<double>& xs = {1.0, 2.0}) {
  if (xs.empty()) throw ArgumentError("non-convexity witness needs at least one x");
  NonconvexityReport report;
  report.pass = true;
  for (double x : xs) {
    if (!(x > 0.0)) throw ArgumentError("non-convexity witness needs x > 0");
    auto f = [x](double a, double beta) {
      const double r = 0.0 - a * beta * x;
      return r * r;
    };
    NonconvexityCase c;
    c.x = x;
    c.f_s1 = f(0.0, 2.0);
    c.f_s2 = f(2.0, 0.0);
    c.f_mid = f(1.0, 1.0);
    c.pass = c.f_s1 == 0.0 && c.f_s2 == 0.0 && c.f_mid == x * x &&
             c.f_mid > 0.5 * c.f_s1 + 0.5 * c.f_s2;
    report.pass = report.pass && c.pass;
    report.cases.push_back(c);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Scaling orbit (existence / non-existence of a minimum)
// ---------------------------------------------------------------------------

struct ScalingReport {
  std::vector<double> objectives;  // along (2^t A, beta / 2^t), t = 0, 1, ...
  double fit_term = 0.0;           // constant along the orbit
  bool strictly_decreasing = false;
  std::ptrdiff_t first_increase = -1;  // -1 when the orbit never climbs
  bool increasing_after_first = false;
  bool bounded_below_by_fit = false;
};

// Walks the objective along (2^t A0, beta0 / 2^t). Doubling A and halving
// beta leaves the product — hence the fit — bit-identical, shrinks the
// lambda |beta|_1 term geometrically, and grows the lambda2 |A|_p^p term, so
// the orbit descends forever without a weight penalty and eventually climbs
// with one.
inline ScalingReport scaling_orbit(const SwitchPenaltyProblem& prob, const Tensor& a0,
                                   const Tensor& beta0, int steps) {
  if (steps < 2) throw ArgumentError("scaling orbit needs at least two steps");
  const detail::ProblemData d = detail::check_problem(prob.x, prob.y, prob.lambda);
  ScalingReport report;
  report.fit_term = detail::fit_sse(a0, beta0.values(), d);

  Tensor a = a0;
  Tensor beta = beta0;
  for (int t = 0; t < steps; ++t) {
    report.objectives.push_back(switch_penalty_objective(a, beta, prob));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= 2.0;
    for (std::size_t i = 0; i < beta.size(); ++i) beta[i] *= 0.5;
  }

  report.strictly_decreasing = true;
  report.bounded_below_by_fit = true;
  for (std::size_t t = 0; t + 1 < report.objectives.size(); ++t) {
    if (!(report.objectives[t + 1] < report.objectives[t])) report.strictly_decreasing = false;
    if (report.first_increase < 0 && report.objectives[t + 1] > report.objectives[t]) {
      report.first_increase = static_cast<std::ptrdiff_t>(t);
    }
  }
  for (double obj : report.objectives) {
    if (obj < report.fit_term) report.bounded_below_by_fit = false;
  }
  if (report.first_increase >= 0) {
    report.increasing_after_first = true;
    for (std::size_t t = static_cast<std::size_t>(report.first_increase);
         t + 1 < report.objectives.size(); ++t) {
      if (!(report.objectives[t + 1] > report.objectives[t])) {
        report.increasing_after_first = false;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Sign-flip symmetry on real networks
// ---------------------------------------------------------------------------

struct SignFlipCase {
  std::vector<std::size_t> channels;
  double output_gap = 0.0;
  double objective_gap = 0.0;
};

struct SignFlipReport {
  std::size_t switch_index = 0;
  std::size_t consumer_index = 0;
  std::size_t block = 1;  // consumer columns per switch channel (flatten crossing)
  double tolerance = 0.0;
  double output_spread = 0.0;     // max output gap across cases
  double objective_spread = 0.0;  // max |objective - reference| across cases
  std::vector<SignFlipCase> cases;
  bool pass = false;
};

namespace detail {

inline double sse(const Tensor& out, const Tensor& targets) {
  if (!out.same_shape(targets)) {
    throw DimensionError("targets " + shape_string(targets.shape()) + " vs outputs " +
                         shape_string(out.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double r = out[i] - targets[i];
    acc += r * r;
  }
  return acc;
}

}  // namespace detail

// Negates beta on the chosen channels of one switch together with the columns
// of the consuming layer they feed, for every subset of `channels` when
// `exhaustive` (all 2^k of them), and checks that outputs and the full
// objective (squared error + both penalties) are unchanged. The symmetry is
// exact only when nothing except flatten sits between the switch and its
// consumer, so anything else there is refused.
inline SignFlipReport signflip_check(const Network& net, std::size_t switch_index,
                                     const std::vector<std::size_t>& channels,
                                     const Tensor& inputs, const Tensor& targets,
                                     const PenaltyConfig& penalty, bool exhaustive = true,
                                     double tolerance = 1e-12) {
  validate(penalty);
  if (switch_index >= net.layer_count() ||
      !std::holds_alternative<SwitchLayer>(net.layer(switch_index))) {
    throw ArgumentError("layer " + std::to_string(switch_index) + " is not a switch");
  }
  const auto& sw = std::get<SwitchLayer>(net.layer(switch_index));
  const std::size_t channel_count = sw.beta.size();
  std::vector<std::size_t> sorted = channels;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (sorted[k] >= channel_count) {
      throw ArgumentError("flip channel " + std::to_string(sorted[k]) + " out of range for " +
                          std::to_string(channel_count) + " channels");
    }
    if (k > 0 && sorted[k] == sorted[k - 1]) {
      throw ArgumentError("flip channel " + std::to_string(sorted[k]) + " listed twice");
    }
  }
  if (exhaustive && channels.size() > 16) {
    throw ArgumentError("exhaustive orbit is capped at 16 channels (2^16 cases)");
  }

  // The consumer must see the switch output unmediated (flatten only merely
  // reindexes); a nonlinearity or normalization in between breaks the
  // cancellation.
  std::size_t consumer = net.layer_count();
  for (std::size_t j = switch_index + 1; j < net.layer_count(); ++j) {
    const Layer& layer = net.layer(j);
    if (std::holds_alternative<FlattenLayer>(layer)) continue;
    if (std::holds_alternative<LinearLayer>(layer) || std::holds_alternative<Conv2dLayer>(layer)) {
      consumer = j;
      break;
    }
    throw StateError("sign-flip symmetry needs the switch wired straight into its consumer; "
                     "found " + std::string(layer_type_name(layer)) + " at layer " +
                     std::to_string(j));
  }
  if (consumer == net.layer_count()) {
    throw StateError("switch at layer " + std::to_string(switch_index) +
                     " feeds the network output; no consumer weights to compensate");
  }

  SignFlipReport report;
  report.switch_index = switch_index;
  report.consumer_index = consumer;
  report.tolerance = tolerance;
  const std::vector<std::size_t>& sw_shape = net.layer_output_shapes()[switch_index];
  std::size_t flat = 1;
  for (std::size_t e : sw_shape) flat *= e;
  report.block = flat / sw_shape[0];

  const Tensor ref_out = infer(net, inputs);
  const double ref_obj =
      penalized_loss(detail::sse(ref_out, targets), net, penalty).total;

  const std::size_t case_count = exhaustive ? (std::size_t{1} << channels.size()) : 1;
  for (std::size_t mask = 0; mask < case_count; ++mask) {
    SignFlipCase fc;
    if (exhaustive) {
      for (std::size_t k = 0; k < channels.size(); ++k) {
        if (mask & (std::size_t{1} << k)) fc.channels.push_back(channels[k]);
      }
    } else {
      fc.channels = channels;
    }

    Network flipped = net;
    auto& beta = std::get<SwitchLayer>(flipped.layers()[switch_index]).beta;
    Layer& consumer_layer = flipped.layers()[consumer];
    for (std::size_t c : fc.channels) {
      beta[c] = -beta[c];
      if (auto* lin = std::get_if<LinearLayer>(&consumer_layer)) {
        for (std::size_t row = 0; row < lin->out_features(); ++row) {
          for (std::size_t b = 0; b < report.block; ++b) {
            double& w = lin->weight.at({row, c * report.block + b});
            w = -w;
          }
        }
      } else {
        auto& conv = std::get<Conv2dLayer>(consumer_layer);
        for (std::size_t o = 0; o < conv.out_channels(); ++o) {
          for (std::size_t kh = 0; kh < conv.kernel_h(); ++kh) {
            for (std::size_t kw = 0; kw < conv.kernel_w(); ++kw) {
              double& w = conv.filters.at({o, c, kh, kw});
              w = -w;
            }
          }
        }
      }
    }

    const Tensor out = infer(flipped, inputs);
    for (std::size_t i = 0; i < out.size(); ++i) {
      fc.output_gap = std::max(fc.output_gap, std::abs(out[i] - ref_out[i]));
    }
    const double obj = penalized_loss(detail::sse(out, targets), flipped, penalty).total;
    fc.objective_gap = std::abs(obj - ref_obj);

    report.output_spread = std::max(report.output_spread, fc.output_gap);
    report.objective_spread = std::max(report.objective_spread, fc.objective_gap);
    report.cases.push_back(std::move(fc));
  }
  report.pass = report.output_spread < tolerance && report.objective_spread < tolerance;
  return report;
}

// ---------------------------------------------------------------------------
// One-call runners (CLI / acceptance entry points)
// ---------------------------------------------------------------------------

struct PropOutcome {
  int prop = 0;
  std::string name;
  bool pass = false;
  std::vector<std::string> notes;  // instance dumps / key numbers
};

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

inline PropOutcome run_proposition(int which, std::uint64_t seed = 0, int trials = 10) {
  PropOutcome out;
  out.prop = which;
  switch (which) {
    case 1: {
      out.name = "group-penalty equivalence";
      const EquivalenceReport rep = verify_equivalence(seed, 0.3, trials);
      out.pass = rep.pass;
      double worst = 0.0;
      for (const EquivalenceTrial& t : rep.trials) {
        worst = std::max(worst, t.objective_gap);
        if (!t.pass) {
          out.notes.push_back("trial " + std::to_string(t.index) + ": group objective " +
                              detail::fmt(t.group_objective) + ", factored " +
                              detail::fmt(t.factored_objective) + ", gap " +
                              detail::fmt(t.objective_gap) + ", mapping gap " +
                              detail::fmt(t.mapping_gap));
        }
      }
      out.notes.push_back(std::to_string(rep.trials.size()) + " instances at lambda " +
                          detail::fmt(rep.lambda) + "; worst objective gap " +
                          detail::fmt(worst) + " (tolerance " + detail::fmt(rep.tolerance) + ")");
      break;
    }
    case 2: {
      out.name = "joint non-convexity";
      const NonconvexityReport rep = nonconvexity_witness();
      out.pass = rep.pass;
      for (const NonconvexityCase& c : rep.cases) {
        out.notes.push_back("x=" + detail::fmt(c.x) + ": f(0,2)=" + detail::fmt(c.f_s1) +
                            " f(2,0)=" + detail::fmt(c.f_s2) + " f(1,1)=" + detail::fmt(c.f_mid) +
                            " > midpoint bound 0");
      }
      break;
    }
    case 3: {
      out.name = "scaling degeneracy";
      SeededRng rng = SeededRng(seed).split(3);
      Tensor x({2, 3}), y({2, 3}), a0({2, 2}), b0({2});
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
      for (std::size_t i = 0; i < a0.size(); ++i) a0[i] = rng.normal();
      for (std::size_t i = 0; i < b0.size(); ++i) b0[i] = 1.0 + std::abs(rng.normal());
      SwitchPenaltyProblem bare{x, y, 0.5, 0.0, 2.0, false};
      const ScalingReport drop = scaling_orbit(bare, a0, b0, 16);
      SwitchPenaltyProblem reg = bare;
      reg.lambda2 = 0.05;
      const ScalingReport rise = scaling_orbit(reg, a0, b0, 16);
      const bool no_min = drop.strictly_decreasing && drop.first_increase < 0 &&
                          drop.bounded_below_by_fit;
      const bool restored = rise.first_increase >= 0 && rise.increasing_after_first;
      out.pass = no_min && restored;
      out.notes.push_back("lambda2=0: objective " + detail::fmt(drop.objectives.front()) +
                          " -> " + detail::fmt(drop.objectives.back()) +
                          " strictly decreasing over " +
                          std::to_string(drop.objectives.size()) + " doublings (fit floor " +
                          detail::fmt(drop.fit_term) + ")");
      out.notes.push_back("lambda2=0.05: first increase at doubling " +
                          std::to_string(rise.first_increase) + ", climbing thereafter to " +
                          detail::fmt(rise.objectives.back()));
      break;
    }
    case 4: {
      out.name = "sign-flip orbit";
      SeededRng rng(seed + 4);
      Network net({6}, {LinearLayer::random(4, 6, rng), SwitchLayer::random(4, rng),
                        LinearLayer::random(3, 4, rng)});
      Tensor inputs({8, 6}), targets({8, 3});
      for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i] = rng.normal();
      for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = rng.normal();
      PenaltyConfig penalty{0.01, 1e-3, 2.0};
      const SignFlipReport rep =
          signflip_check(net, 1, {0, 1, 2, 3}, inputs, targets, penalty, true);
      out.pass = rep.pass;
      out.notes.push_back(std::to_string(rep.cases.size()) + " flip subsets of 4 channels: " +
                          "output spread " + detail::fmt(rep.output_spread) +
                          ", objective spread " + detail::fmt(rep.objective_spread) +
                          " (tolerance " + detail::fmt(rep.tolerance) + ")");
      break;
    }
    default:
      throw ArgumentError("proposition number must be 1..4, got " + std::to_string(which));
  }
  return out;
}

inline std::vector<PropOutcome> run_all_propositions(std::uint64_t seed = 0, int trials = 10) {
  std::vector<PropOutcome> outcomes;
  for (int p = 1; p <= 4; ++p) outcomes.push_back(run_proposition(p, seed, trials));
  return outcomes;
}

}  // namespace slimnet
