#pragma once

#include <vector>

#include <Eigen/Core>

namespace condcap {

/// min 1/2 x^T G x + c^T x  subject to  A^T x >= b  (one constraint per column of A).
struct QpProblem {
  Eigen::MatrixXd hessian;      // G, symmetric positive definite
  Eigen::VectorXd linear;       // c
  Eigen::MatrixXd constraints;  // A, n x m
  Eigen::VectorXd bounds;       // b, m
};

struct QpOptions {
  int max_iter = 2000;
  /// A constraint counts as violated when its slack is below
  /// -tol * (1 + |b_j| + |a_j|_inf |x|_inf).
  double tol = 1e-12;
  /// Warm start: constraints whose scaled slack is within this band are
  /// taken as the initial working set.
  double warm_band = 1e-8;
};

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // one per constraint, zero when inactive
  std::vector<int> active;
  double objective = 0.0;
  int additions = 0;
  int drops = 0;
  int iterations = 0;
  bool warm_started = false;
  /// Warm start already optimal: no constraint was added or dropped.
  bool immediate = false;
};

/// Goldfarb-Idnani dual active-set method with dense factorizations.
/// Throws ContractError when G is not positive definite or shapes disagree,
/// NumericalError when the constraints are infeasible, NonconvergenceError
/// past max_iter.
QpResult solve_qp(const QpProblem& problem, const QpOptions& options = {},
                  const Eigen::VectorXd* warm_start = nullptr);

}  // namespace condcap
