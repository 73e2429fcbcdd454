#include "condcap/duality.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "condcap/error.hpp"

namespace condcap {

namespace {

void require_capacity(double capacity) {
  if (!(capacity > 0.0) || !std::isfinite(capacity)) {
    std::ostringstream os;
    os << "capacity " << capacity << " is not finite and positive; the capacitary constants are "
       << "not unique";
    throw DegenerateError(os.str());
  }
}

// (S w)^T K (S w) for weights of any sign.
double seminorm_sq(const KernelMatrix& matrix, const Eigen::VectorXd& w) {
  Eigen::VectorXd sw = w;
  for (std::size_t i = 0; i < matrix.layout.plates(); ++i)
    sw.segment(matrix.layout.offsets[i], matrix.layout.sizes[i]) *= matrix.layout.signs[i];
  return sw.dot(matrix.entries * sw);
}

// Residuals alpha_i a_i pot_k - c_i g_k from signed potentials pot = K S w.
std::vector<Eigen::VectorXd> residuals(const PlateLayout& layout, const WeightSpec& weights,
                                       const Eigen::VectorXd& pot,
                                       const std::vector<double>& constants) {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    const auto seg = pot.segment(layout.offsets[i], layout.sizes[i]);
    out.push_back(layout.signs[i] * weights.a(i) * seg - constants[i] * weights.g(i));
  }
  return out;
}

void summarize(DualCertificate& cert) {
  cert.support_residual = 0.0;
  cert.min_residual = kInfinity;
  for (std::size_t i = 0; i < cert.feasibility_residuals.size(); ++i) {
    const double sc = std::max(1.0, std::abs(cert.constants[i]));
    const Eigen::VectorXd& r = cert.feasibility_residuals[i];
    const Eigen::VectorXd& w = cert.candidate.weights[i];
    for (Index k = 0; k < r.size(); ++k) {
      cert.min_residual = std::min(cert.min_residual, r(k) / sc);
      if (w(k) > kSupportThreshold)
        cert.support_residual = std::max(cert.support_residual, std::abs(r(k)) / sc);
    }
  }
  cert.sum_constants = 0.0;
  for (double c : cert.constants) cert.sum_constants += c;
  cert.gap = std::abs(cert.dual_energy - cert.capacity) / cert.capacity;
}

}  // namespace

ToleranceLadder ladder_for(const KernelMatrix& matrix) {
  if (matrix.regularized) return {"regularized", 0.02};
  return {"bounded", 1e-8};
}

CapacitaryConstants capacitary_constants(const SolveReport& report, const KernelMatrix& matrix,
                                         const Condenser& condenser, const WeightSpec& weights) {
  require_capacity(report.capacity);
  const PlateLayout& layout = condenser.layout();
  if (matrix.layout.sizes != layout.sizes || report.minimizer.shape().sizes != layout.sizes)
    throw ContractError("capacitary_constants: report, matrix and condenser disagree");
  const double cap = report.capacity;
  const Eigen::VectorXd pot = node_potentials(matrix, report.minimizer);

  CapacitaryConstants out;
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    const auto seg = pot.segment(layout.offsets[i], layout.sizes[i]);
    const double alpha = layout.signs[i];
    out.values.push_back(alpha * cap * report.minimizer.weights[i].dot(seg));
    const Eigen::VectorXd ratio = (alpha * weights.a(i) * cap * seg).cwiseQuotient(weights.g(i));
    out.node_minimum.push_back(ratio.minCoeff());
    out.discrepancy = std::max(out.discrepancy, std::abs(out.values[i] - out.node_minimum[i]));
    out.sum += out.values[i];
  }
  return out;
}

DualCertificate build_dual_certificate(const SolveReport& report, const KernelMatrix& matrix,
                                       const Condenser& condenser, const WeightSpec& weights) {
  const CapacitaryConstants constants = capacitary_constants(report, matrix, condenser, weights);
  DualCertificate cert;
  cert.ladder = ladder_for(matrix);
  cert.capacity = report.capacity;
  cert.candidate = report.minimizer.scaled(report.capacity);
  cert.constants = constants.values;
  const Eigen::VectorXd pot = node_potentials(matrix, cert.candidate);
  cert.feasibility_residuals = residuals(condenser.layout(), weights, pot, cert.constants);
  cert.dual_energy = seminorm_sq(matrix, cert.candidate.flat());
  summarize(cert);
  if (cert.min_residual < -cert.ladder.tol) {
    std::ostringstream os;
    os << "dual certificate infeasible: scaled residual " << cert.min_residual << " below -"
       << cert.ladder.tol << " (" << cert.ladder.name << " ladder); the primal solve has not "
       << "converged";
    throw NonconvergenceError(os.str());
  }
  return cert;
}

DualCertificate solve_dual_direct(const KernelMatrix& matrix, const Condenser& condenser,
                                  const WeightSpec& weights, const std::vector<double>& constants,
                                  double capacity, const QpOptions& options,
                                  const CondenserMeasure* warm_start) {
  require_capacity(capacity);
  const PlateLayout& layout = condenser.layout();
  const Index n = layout.total();
  if (n > kDualDirectMaxNodes) {
    std::ostringstream os;
    os << "solve_dual_direct handles at most " << kDualDirectMaxNodes << " nodes, got " << n;
    throw ContractError(os.str());
  }
  if (constants.size() != layout.plates())
    throw ContractError("solve_dual_direct: one constant per plate is required");
  if (matrix.layout.sizes != layout.sizes)
    throw ContractError("solve_dual_direct: matrix was not assembled for this condenser");

  Eigen::VectorXd signs(n);
  for (std::size_t i = 0; i < layout.plates(); ++i)
    signs.segment(layout.offsets[i], layout.sizes[i]).setConstant(layout.signs[i]);
  const Eigen::MatrixXd q = signs.asDiagonal() * matrix.entries * signs.asDiagonal();

  QpProblem qp;
  qp.hessian = 2.0 * q;
  qp.linear = Eigen::VectorXd::Zero(n);
  qp.constraints.resize(n, 2 * n);
  qp.bounds.resize(2 * n);
  for (std::size_t i = 0; i < layout.plates(); ++i)
    for (Index k = 0; k < layout.sizes[i]; ++k) {
      const Index j = layout.offsets[i] + k;
      qp.constraints.col(j) = weights.a(i) * q.col(j);
      qp.bounds(j) = constants[i] * weights.g(i)(k);
    }
  qp.constraints.rightCols(n).setIdentity();
  qp.bounds.tail(n).setZero();

  Eigen::VectorXd warm;
  if (warm_start) warm = warm_start->flat();
  const QpResult res = solve_qp(qp, options, warm_start ? &warm : nullptr);

  DualCertificate cert;
  cert.ladder = ladder_for(matrix);
  cert.capacity = capacity;
  cert.constants = constants;
  cert.candidate = CondenserMeasure::from_flat(res.x.cwiseMax(0.0), layout);
  cert.dual_energy = seminorm_sq(matrix, cert.candidate.flat());
  cert.feasibility_residuals =
      residuals(layout, weights, node_potentials(matrix, cert.candidate), constants);
  cert.qp_iterations = res.iterations;
  cert.qp_immediate = res.immediate;
  summarize(cert);
  return cert;
}

Characterization characterize(const CondenserMeasure& candidate, const std::vector<double>& taus,
                              const SolveReport& report, const KernelMatrix& matrix,
                              const WeightSpec& weights, double tol) {
  require_capacity(report.capacity);
  const PlateLayout& layout = matrix.layout;
  if (candidate.shape().sizes != layout.sizes || taus.size() != layout.plates())
    throw ContractError("characterize: candidate or taus do not match the condenser");
  const double cap = report.capacity;
  Characterization out;
  if (!candidate.nonnegative()) out.failed.push_back("nonnegativity");

  const Eigen::VectorXd pot = node_potentials(matrix, candidate);
  const std::vector<Eigen::VectorXd> r = residuals(layout, weights, pot, taus);
  out.worst_potential_bound = kInfinity;
  for (std::size_t i = 0; i < layout.plates(); ++i)
    out.worst_potential_bound =
        std::min(out.worst_potential_bound, r[i].minCoeff() / std::max(1.0, std::abs(taus[i])));
  if (out.worst_potential_bound < -tol) out.failed.push_back("potential_bound");

  const double nu_sq = seminorm_sq(matrix, candidate.flat());
  double tau_sum = 0.0;
  for (double t : taus) tau_sum += t;
  out.energy_balance_residual = tau_sum - (cap + nu_sq) / (2.0 * cap);
  if (std::abs(out.energy_balance_residual) > tol) out.failed.push_back("energy_balance");

  const Eigen::VectorXd diff = candidate.flat() - cap * report.minimizer.flat();
  out.seminorm_distance = std::sqrt(std::max(0.0, seminorm_sq(matrix, diff)));
  for (std::size_t i = 0; i < layout.plates(); ++i)
    out.tau_deviation =
        std::max(out.tau_deviation, std::abs(taus[i] - layout.signs[i] * cap * report.eta[i]));

  if (out.failed.empty() &&
      (out.seminorm_distance > std::sqrt(10.0 * tol * std::max(1.0, cap)) ||
       out.tau_deviation > std::sqrt(tol)))
    out.failed.push_back("uniqueness");
  out.accepted = out.failed.empty();
  return out;
}

std::vector<SignTrend> sign_property_check(const std::vector<SolveReport>& stages, double tol) {
  std::vector<SignTrend> out;
  if (stages.empty()) return out;
  const std::size_t plates = stages.front().constants.size();
  for (std::size_t j = 0; j < plates; ++j) {
    SignTrend t;
    t.plate = j;
    t.nonincreasing = true;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      if (stages[s].constants.size() != plates)
        throw ContractError("sign_property_check: stages have different plate counts");
      t.constants.push_back(stages[s].constants[j]);
      if (s > 0 && t.constants[s] > t.constants[s - 1] + tol) t.nonincreasing = false;
    }
    const auto [lo, hi] = std::minmax_element(t.constants.begin(), t.constants.end());
    t.stable = *hi - *lo < 1e-6;
    t.last = t.constants.back();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace condcap
