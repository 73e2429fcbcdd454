#pragma once

// Instance builders and independent reference computations shared by the
// unit tests and the acceptance binary. Nothing here calls the solver.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "condcap/condenser.hpp"
#include "condcap/kernel.hpp"
#include "condcap/random.hpp"

namespace condcap::testing {

/// Potential at distance d from the centre of a uniform unit-mass shell of
/// radius rho under 1/|x - y|, by quadrature over the polar angle:
///   (1/2) int_{-1}^{1} du / sqrt(d^2 + rho^2 - 2 d rho u).
/// The substitution u = 1 - s^2 removes the endpoint singularity when d = rho;
/// composite 2-point Gauss-Legendre on `panels` panels.
inline double shell_potential_quadrature(double d, double rho, int panels = 10000) {
  const double upper = std::sqrt(2.0);
  const double h = upper / panels;
  const double node = 0.5 / std::sqrt(3.0);
  double sum = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = (p + 0.5) * h;
    for (double off : {-node, node}) {
      const double s = mid + off * h;
      const double denom = std::sqrt((d - rho) * (d - rho) + 2.0 * d * rho * s * s);
      sum += 0.5 * h * (2.0 * s / denom);
    }
  }
  return 0.5 * sum;
}

/// Mutual energy of uniform unit shells of radii r1 and r2 (concentric):
/// the potential of one shell is constant on the other.
inline double shell_mutual_energy_quadrature(double r1, double r2) {
  return shell_potential_quadrature(r1, r2);
}

struct Instance {
  Condenser condenser;
  WeightSpec weights;
  KernelMatrix matrix;
};

inline Instance make_instance(std::vector<Plate> plates, const KernelSpec& kernel,
                              const std::vector<Eigen::VectorXd>& g, const Eigen::VectorXd& a,
                              const DiagonalRule& rule = {}) {
  Instance inst;
  inst.condenser = Condenser(std::move(plates));
  inst.weights = WeightSpec::table(inst.condenser, g, a);
  inst.matrix = assemble_matrix(kernel, inst.condenser, rule);
  return inst;
}

/// Random Gaussian-kernel instance: 1 or 2 plates (opposite signs), 1..3
/// nodes each, random g and a. Plates are shifted apart so that their node
/// clouds are disjoint.
inline Instance random_tiny_gaussian(Rng& rng) {
  const int plates = 1 + int(rng() % 2);
  std::vector<Plate> ps;
  std::vector<Eigen::VectorXd> g;
  Eigen::VectorXd a(plates);
  for (int i = 0; i < plates; ++i) {
    Plate p;
    p.sign = i == 0 ? 1 : -1;
    const Index n = 1 + Index(rng() % 3);
    p.nodes.resize(3, n);
    for (Index k = 0; k < n; ++k)
      for (int d = 0; d < 3; ++d) p.nodes(d, k) = 1.5 * uniform01(rng) + (i == 1 ? 1.0 : 0.0);
    Eigen::VectorXd gi(n);
    for (Index k = 0; k < n; ++k) gi(k) = 0.5 + uniform01(rng);
    g.push_back(gi);
    a(i) = 0.5 + uniform01(rng);
    ps.push_back(std::move(p));
  }
  return make_instance(std::move(ps), KernelSpec::gaussian(0.5 + uniform01(rng)), g, a);
}

/// Concentric Newton spheres r (+) and R (-), n nodes each, g = 1, a = (1, 1).
inline Instance sphere_capacitor(Index n, double r = 1.0, double big_r = 2.0) {
  std::vector<Plate> ps(2);
  ps[0].sign = 1;
  ps[0].generator = SphereShell{Eigen::Vector3d::Zero(), r};
  ps[0].nodes = generate_nodes(ps[0].generator, n, 0);
  ps[1].sign = -1;
  ps[1].generator = SphereShell{Eigen::Vector3d::Zero(), big_r};
  ps[1].nodes = generate_nodes(ps[1].generator, n, 1);
  Instance inst;
  inst.condenser = Condenser(std::move(ps));
  inst.weights = WeightSpec::constant(inst.condenser, 1.0, Eigen::Vector2d(1.0, 1.0));
  inst.matrix = assemble_matrix(KernelSpec::newton(3), inst.condenser);
  return inst;
}

/// Unit-ball surface, n nodes, Newton kernel, g = 1, a = 1.
inline Instance unit_ball(Index n) {
  std::vector<Plate> ps(1);
  ps[0].generator = SphereShell{};
  ps[0].nodes = generate_nodes(ps[0].generator, n, 0);
  Instance inst;
  inst.condenser = Condenser(std::move(ps));
  inst.weights = WeightSpec::constant(inst.condenser, 1.0, Eigen::VectorXd::Ones(1));
  inst.matrix = assemble_matrix(KernelSpec::newton(3), inst.condenser);
  return inst;
}

/// Signed quadratic form (S w)^T K (S w), written out from the matrix entries.
inline double signed_energy(const KernelMatrix& m, const Eigen::VectorXd& w) {
  Eigen::VectorXd sw = w;
  for (std::size_t i = 0; i < m.layout.plates(); ++i)
    sw.segment(m.layout.offsets[i], m.layout.sizes[i]) *= double(m.layout.signs[i]);
  return sw.dot(m.entries * sw);
}

/// Brute-force minimum of w^T K w over a single plate of three nodes with
/// g = 1, a = 1, on the simplex grid of step 1/m.
inline double single_plate_grid_minimum(const Eigen::Matrix3d& k, int m) {
  double best = INFINITY;
  for (int i = 0; i <= m; ++i)
    for (int j = 0; j <= m - i; ++j) {
      const Eigen::Vector3d w(double(i) / m, double(j) / m, double(m - i - j) / m);
      best = std::min(best, w.dot(k * w));
    }
  return best;
}

}  // namespace condcap::testing
