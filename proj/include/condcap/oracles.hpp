#pragma once

#include <string>
#include <vector>

#include "condcap/condenser.hpp"
#include "condcap/kernel.hpp"

namespace condcap {

struct OracleResult {
  double capacity = 0.0;
  std::vector<double> constants;
  std::string distribution_descriptor;
  std::string provenance;
  double min_energy = 0.0;
  CondenserMeasure argmin;  // grid search only
};

/// Concentric spheres S(0, r) (+) and S(0, R) (-) under the Newton kernel in
/// R^3: unit shells have self-energy 1/rho and mutual energy 1/R, so the
/// minimum energy is 1/r - 1/R. Throws ContractError unless 0 < r < R and dim = 3.
OracleResult sphere_capacitor_oracle(double r, double big_r, int dim = 3);

/// Ball B(0, r) in R^3: capacity r, equilibrium uniform on the boundary.
OracleResult ball_capacity_oracle(double r, int dim = 3);

/// Grid points of one plate's simplex at a resolution are C(M + n - 1, n - 1)
/// with M = 1 / resolution; the full product over plates is enumerated when
/// it stays below this budget.
inline constexpr double kGridBudget = 2e8;

/// Minimum of the signed energy over the grid {w = a t / g : t in (1/M) Z^n,
/// sum t = 1} per plate. Needs <= 2 plates, <= 3 nodes per plate and
/// resolution <= 1e-2 (ContractError otherwise). When the two-plate product
/// grid exceeds kGridBudget, plate 0 is enumerated on the grid and plate 1
/// is minimized exactly for each grid point by enumerating the faces of its
/// simplex; the provenance says which search ran.
OracleResult grid_search_oracle(const KernelMatrix& matrix, const Condenser& condenser,
                                const WeightSpec& weights, double resolution);

}  // namespace condcap
