#pragma once

#include <string>
#include <vector>

#include "condcap/active_set_qp.hpp"
#include "condcap/condenser.hpp"
#include "condcap/kernel.hpp"
#include "condcap/solver.hpp"

namespace condcap {

/// Tolerances used when certifying: bounded kernels are certified tightly,
/// regularized singular kernels only up to the bias of the diagonal rule.
struct ToleranceLadder {
  std::string name;  // "bounded" or "regularized"
  double tol = 0.0;
};

ToleranceLadder ladder_for(const KernelMatrix& matrix);

struct CapacitaryConstants {
  /// C_i = alpha_i cap kappa(lambda^i, lambda).
  std::vector<double> values;
  /// min over plate i's nodes of alpha_i a_i kappa(x, cap lambda) / g(x).
  std::vector<double> node_minimum;
  double discrepancy = 0.0;  // max_i |values_i - node_minimum_i|
  double sum = 0.0;
};

/// Throws DegenerateError when the capacity is zero or not finite.
CapacitaryConstants capacitary_constants(const SolveReport& report, const KernelMatrix& matrix,
                                         const Condenser& condenser, const WeightSpec& weights);

struct DualCertificate {
  CondenserMeasure candidate;  // per-plate weights of gamma (signs from the plates)
  std::vector<double> constants;
  /// alpha_i a_i kappa(x, gamma) - C_i g(x) at every node of plate i.
  std::vector<Eigen::VectorXd> feasibility_residuals;
  double sum_constants = 0.0;
  double dual_energy = 0.0;  // ||gamma||^2
  double capacity = 0.0;     // the capacity the gap is measured against
  double gap = 0.0;          // |dual_energy - capacity| / capacity
  /// max over weight-carrying nodes of |residual| / max(1, |C_i|).
  double support_residual = 0.0;
  double min_residual = 0.0;  // min over all nodes, same scaling
  ToleranceLadder ladder;
  // Only set by solve_dual_direct.
  int qp_iterations = 0;
  bool qp_immediate = false;
};

/// gamma = cap lambda with the constants of capacitary_constants. Throws
/// NonconvergenceError when a residual is below -tol (primal not converged).
DualCertificate build_dual_certificate(const SolveReport& report, const KernelMatrix& matrix,
                                       const Condenser& condenser, const WeightSpec& weights);

inline constexpr Index kDualDirectMaxNodes = 200;

/// min ||nu||^2 over per-plate nonnegative weights with the plate sign
/// pattern, subject to alpha_i a_i kappa(x, nu) >= C_i g(x) at every node.
/// `constants` are the C_i, `capacity` the value the gap is measured
/// against. Throws ContractError above kDualDirectMaxNodes nodes.
DualCertificate solve_dual_direct(const KernelMatrix& matrix, const Condenser& condenser,
                                  const WeightSpec& weights, const std::vector<double>& constants,
                                  double capacity, const QpOptions& options = {},
                                  const CondenserMeasure* warm_start = nullptr);

struct Characterization {
  bool accepted = false;
  /// Names of the failed conditions: "nonnegativity", "potential_bound", "energy_balance",
  /// "uniqueness".
  std::vector<std::string> failed;
  double worst_potential_bound = 0.0;   // min over nodes of (alpha_i a_i kappa(x, nu) - tau_i g) / max(1, |tau_i|)
  double energy_balance_residual = 0.0; // sum tau - (cap + ||nu||^2) / (2 cap)
  double seminorm_distance = 0.0;  // ||nu - cap lambda||
  double tau_deviation = 0.0;      // max |tau_i - C_i|
};

/// Checks whether (candidate, taus) satisfy the conditions that single out
/// the solution gamma = cap lambda and its constants.
Characterization characterize(const CondenserMeasure& candidate, const std::vector<double>& taus,
                              const SolveReport& report, const KernelMatrix& matrix,
                              const WeightSpec& weights, double tol);

struct SignTrend {
  std::size_t plate = 0;
  std::vector<double> constants;  // C_j per stage
  bool nonincreasing = false;
  bool stable = false;            // spread across stages below 1e-6
  double last = 0.0;
};

/// Trend of every C_j across a family of stages (diagnostic only).
std::vector<SignTrend> sign_property_check(const std::vector<SolveReport>& stages,
                                           double tol = 1e-8);

}  // namespace condcap
