#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "condcap/condenser.hpp"
#include "condcap/kernel.hpp"
#include "condcap/random.hpp"

namespace condcap {

struct SolverOptions {
  /// Stop once the relative energy decrease and the relative certificate
  /// gap are both below tol.
  double tol = 1e-10;
  int max_iter = 50000;
  /// Random feasible probes used for the reported certificate gap.
  int certify_trials = 32;
  std::uint64_t seed = 1;
  /// Start from a seeded random feasible point instead of the uniform one.
  bool random_start = false;
};

/// Outcome of the discrete minimum-energy problem over {w >= 0, g.w^i = a_i}.
struct SolveReport {
  double capacity = 0.0;    // 1 / min_energy
  double min_energy = 0.0;  // ||lambda||^2
  CondenserMeasure minimizer;
  /// eta_i = kappa(lambda^i, lambda), signed potential integrated against plate i.
  std::vector<double> eta;
  /// C_i = alpha_i * capacity * eta_i; they sum to one.
  std::vector<double> constants;
  /// Signed potential kappa(x, lambda) at every node, flat layout order.
  Eigen::VectorXd potentials;
  int iterations = 0;
  std::vector<double> energy_trace;
  /// Largest optimality residual ||nu - lambda||^2 - ||nu||^2 + ||lambda||^2
  /// over `certify_trials` random feasible nu.
  double certificate_gap = 0.0;
  /// Same residual maximised over every feasible nu (attained at a vertex of
  /// the product of weighted simplices). Bounds min_energy - optimum.
  double worst_case_gap = 0.0;
  double relative_decrease = 0.0;
  bool converged = false;
};

/// Accelerated projected gradient with function-value restart.
/// Throws NumericalError when the minimum energy is not positive.
SolveReport solve_min_energy(const KernelMatrix& matrix, const Condenser& condenser,
                             const WeightSpec& weights, const SolverOptions& options = {});

struct MinimizerCertificate {
  double gap = 0.0;             // max over random probes
  double worst_case_gap = 0.0;  // max over all feasible probes
  std::vector<double> eta;
  /// max over weight-carrying nodes of |a_i kappa(x, lambda) - eta_i g(x)|,
  /// per plate, divided by max(|eta_i|, ||lambda||^2).
  std::vector<double> equilibrium_residual;
  /// max over all nodes of alpha_i eta_i g(x) - alpha_i a_i kappa(x, lambda),
  /// per plate, same normalisation (<= 0 when the inequality holds).
  std::vector<double> inequality_violation;
};

inline constexpr double kSupportThreshold = 1e-12;

/// optimality certificate for a feasible candidate plus the node-wise
/// equilibrium relations. Throws ContractError for infeasible candidates.
MinimizerCertificate certify_minimizer(const KernelMatrix& matrix, const Condenser& condenser,
                                       const WeightSpec& weights,
                                       const CondenserMeasure& candidate, int trials,
                                       std::uint64_t seed);

/// Random feasible measure: Dirichlet(1) on each plate's g-weighted simplex.
CondenserMeasure random_feasible_measure(const WeightSpec& weights, Rng& rng);

// ---------------------------------------------------------------------------
// Exhaustion by nested sub-condensers
// ---------------------------------------------------------------------------

struct ExhaustionSchedule {
  std::vector<Condenser> stages;  // increasing; the last one is the full condenser
};

/// Schedule whose stage s keeps the first counts[s][i] nodes of plate i.
ExhaustionSchedule prefix_schedule(const Condenser& full,
                                   const std::vector<std::vector<Index>>& counts);

/// Same condenser with every plate's nodes reordered farthest-point first,
/// so that node prefixes are well-spread subsets.
Condenser farthest_point_reordered(const Condenser& condenser);

/// Index of every stage node inside the final stage, per plate. Throws
/// ContractError naming the offending stages when the schedule is not nested.
std::vector<std::vector<std::vector<Index>>> nesting_maps(const ExhaustionSchedule& schedule);

struct ExhaustionResult {
  std::vector<SolveReport> reports;
  std::vector<double> capacities;
  bool nondecreasing = false;  // within 1e-10
};

/// Solves every stage with the kernel matrix of the final stage restricted to
/// the stage's nodes, so stage problems are exact sub-problems. `weights`
/// refers to the final stage.
ExhaustionResult exhaust(const KernelSpec& kernel, const DiagonalRule& rule,
                         const ExhaustionSchedule& schedule, const WeightSpec& weights,
                         const SolverOptions& options = {});

inline constexpr double kMonotonicityTolerance = 1e-10;

// ---------------------------------------------------------------------------

struct HomogeneityCheck {
  double residual = 0.0;            // |min_energy(a cap) - cap| / cap
  double minimizer_deviation = 0.0; // max |w' - cap w| / max(cap w)
  SolveReport rescaled;
};

/// Re-solves with constraint vector a * capacity.
HomogeneityCheck scaled_problem_check(const SolveReport& report, const KernelMatrix& matrix,
                                      const Condenser& condenser, const WeightSpec& weights,
                                      const SolverOptions& options = {});

struct SeededComparison {
  double weight_distance = 0.0;     // max |w1 - w2|
  double seminorm_distance_sq = 0.0;  // ||lambda1 - lambda2||^2
  double energy_difference = 0.0;
  /// ||l1 - l2||^2 <= 2(||l1||^2 + ||l2||^2) - 4 min(energies) + 1e-8
  bool proximity_bound_holds = false;
  bool nonunique = false;  // weights differ by > 1e-4 while energies agree within tol
  SolveReport first;
  SolveReport second;
};

SeededComparison compare_seeded_runs(const KernelMatrix& matrix, const Condenser& condenser,
                                     const WeightSpec& weights, const SolverOptions& options,
                                     std::uint64_t seed_a, std::uint64_t seed_b);

// ---------------------------------------------------------------------------

struct EscapeStage {
  double capacity = 0.0;
  double max_radius = 0.0;                 // farthest node from the centre
  std::vector<double> beyond_fraction;     // per plate, share of g-mass beyond the reference radius
  std::vector<double> constants;
  bool converged = false;
};

struct EscapeReport {
  double reference_radius = 0.0;
  std::vector<EscapeStage> stages;
  std::vector<bool> drift_nondecreasing;  // per plate
  std::vector<SolveReport> reports;       // per stage
};

/// Solves a growing family of truncations and tracks how much of each
/// plate's g-mass sits beyond `reference_radius` from `center`.
EscapeReport mass_escape_experiment(const KernelSpec& kernel, const DiagonalRule& rule,
                                    const ExhaustionSchedule& schedule, const WeightSpec& weights,
                                    double reference_radius, const Eigen::Vector3d& center,
                                    const SolverOptions& options = {});

}  // namespace condcap
