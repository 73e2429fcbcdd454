#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "condcap/error.hpp"
#include "condcap/kernel.hpp"
#include "support.hpp"

using namespace condcap;
using condcap::testing::shell_potential_quadrature;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(Index(v.size()));
  Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

Plate plate_of(const Eigen::MatrixXd& nodes, int sign = 1) {
  Plate p;
  p.sign = sign;
  p.nodes = nodes;
  p.generator = PointList{nodes};
  return p;
}

Condenser shells(Index n, double r1, double r2) {
  std::vector<Plate> ps(2);
  ps[0].generator = SphereShell{Eigen::Vector3d::Zero(), r1};
  ps[0].nodes = generate_nodes(ps[0].generator, n, 0);
  ps[1].sign = -1;
  ps[1].generator = SphereShell{Eigen::Vector3d::Zero(), r2};
  ps[1].nodes = generate_nodes(ps[1].generator, n, 0);
  return Condenser(std::move(ps));
}

}  // namespace

TEST_CASE("shell quadrature reproduces the closed-form shell potential") {
  for (double rho : {0.5, 1.0, 2.0}) {
    for (double d : {0.0, 0.3, 0.99, 1.0, 1.7, 2.0, 5.0}) {
      const double exact = 1.0 / std::max(d, rho);
      CHECK(std::abs(shell_potential_quadrature(d, rho) - exact) <= 1e-6 * exact);
    }
  }
}

TEST_CASE("kernel_eval examples") {
  const Eigen::Vector3d o = Eigen::Vector3d::Zero();
  CHECK(kernel_eval(KernelSpec::newton(3), o, Eigen::Vector3d(1, 0, 0)) == doctest::Approx(1.0));
  CHECK(kernel_eval(KernelSpec::riesz(1.0, 3), o, Eigen::Vector3d(2, 0, 0)) ==
        doctest::Approx(0.25));
  CHECK(kernel_eval(KernelSpec::gaussian(1.0), vec({0.0}), vec({0.0})) == doctest::Approx(1.0));
  CHECK(kernel_eval(KernelSpec::gaussian(2.0), vec({0.0}), vec({2.0})) ==
        doctest::Approx(std::exp(-1.0)));
  CHECK(kernel_eval(KernelSpec::newton(3), o, o) == kInfinity);
  CHECK(kernel_eval(KernelSpec::riesz(0.5, 2), vec({0, 0}), vec({0, 0})) == kInfinity);
}

TEST_CASE("kernel_eval is symmetric") {
  Rng rng(7);
  const KernelSpec specs[] = {KernelSpec::newton(3), KernelSpec::riesz(1.3, 3),
                              KernelSpec::gaussian(0.7), KernelSpec::green_ball(2.0, 3)};
  for (const auto& spec : specs) {
    for (int t = 0; t < 20; ++t) {
      Eigen::Vector3d x, y;
      for (int d = 0; d < 3; ++d) {
        x(d) = uniform01(rng) - 0.5;
        y(d) = uniform01(rng) - 0.5;
      }
      CHECK(spec(x, y) == doctest::Approx(spec(y, x)).epsilon(1e-12));
    }
  }
}

TEST_CASE("invalid kernel parameters are configuration errors") {
  CHECK_THROWS_AS(KernelSpec::riesz(3.0, 3), ConfigError);
  CHECK_THROWS_AS(KernelSpec::riesz(0.0, 3), ConfigError);
  CHECK_THROWS_AS(KernelSpec::newton(2), ConfigError);
  CHECK_THROWS_AS(KernelSpec::gaussian(0.0), ConfigError);
  CHECK_THROWS_AS(KernelSpec::gaussian(-1.0), ConfigError);
  CHECK_THROWS_AS(KernelSpec::green_ball(0.0, 3), ConfigError);
}

TEST_CASE("green kernel matches the image-charge formula and vanishes at the boundary") {
  const KernelSpec g = KernelSpec::green_ball(2.0, 3);
  const Eigen::Vector3d x(0.3, -0.2, 0.5), y(-0.4, 0.1, 0.2);
  const Eigen::Vector3d y_star = 4.0 * y / y.squaredNorm();
  const double expected = 1.0 / (x - y).norm() - (2.0 / y.norm()) / (x - y_star).norm();
  CHECK(g(x, y) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(g(x, y) > 0.0);
  // Centre: the image term is the constant 1/R.
  CHECK(g(x, Eigen::Vector3d::Zero()) == doctest::Approx(1.0 / x.norm() - 0.5));
  const Eigen::Vector3d near_boundary = Eigen::Vector3d(0.0, 0.0, 2.0 - 1e-9);
  CHECK(std::abs(g(near_boundary, y)) < 1e-6);
  CHECK_THROWS_AS(g(Eigen::Vector3d(0, 0, 2.5), y), GeometryError);
}

TEST_CASE("potential of a sphere measure matches the shell quadrature") {
  std::vector<Plate> ps(1);
  ps[0].generator = SphereShell{};
  ps[0].nodes = generate_nodes(ps[0].generator, 500, 0);
  const Condenser c(std::move(ps));
  CondenserMeasure mu;
  mu.weights = {Eigen::VectorXd::Constant(500, 1.0 / 500)};
  const double expected = shell_potential_quadrature(2.0, 1.0);
  const double got = potential(KernelSpec::newton(3), Eigen::Vector3d(2, 0, 0), c, mu);
  CHECK(std::abs(got - expected) < 0.01);
  CHECK(potential(KernelSpec::newton(3), Eigen::Vector3d(0, 0, 5), c,
                  CondenserMeasure::zeros(c.layout())) == 0.0);
}

TEST_CASE("potential edge cases") {
  const Condenser c({plate_of(Eigen::MatrixXd::Zero(1, 1))});
  CondenserMeasure mu;
  mu.weights = {vec({1.0})};
  CHECK(potential(KernelSpec::gaussian(1.0), vec({1.0}), c, mu) ==
        doctest::Approx(std::exp(-1.0)));

  Eigen::MatrixXd two(3, 2);
  two << 0, 1, 0, 0, 0, 0;
  const Condenser c3({plate_of(two)});
  CondenserMeasure nu;
  nu.weights = {vec({0.5, 0.5})};
  CHECK_THROWS_AS(potential(KernelSpec::newton(3), Eigen::Vector3d::Zero(), c3, nu),
                  NumericalError);
  DiagonalRule literal;
  literal.smoothing_neighbours = 0;
  const KernelMatrix m = assemble_matrix(KernelSpec::newton(3), c3, literal);
  CHECK(potential(KernelSpec::newton(3), Eigen::Vector3d::Zero(), c3, nu, &m) ==
        doctest::Approx(0.5 * m.entries(0, 0) + 0.5 * m.entries(0, 1)));
}

TEST_CASE("potential agrees with the matrix-vector product at nodes") {
  const Condenser c = shells(60, 1.0, 2.0);
  const KernelSpec k = KernelSpec::newton(3);
  const KernelMatrix m = assemble_matrix(k, c);
  Rng rng(3);
  CondenserMeasure mu;
  for (const auto& p : c.plates()) {
    Eigen::VectorXd w(p.size());
    for (Index j = 0; j < w.size(); ++j) w(j) = uniform01(rng);
    mu.weights.push_back(w);
  }
  const Eigen::VectorXd pot = node_potentials(m, mu);
  const Eigen::MatrixXd x = c.all_nodes();
  for (Index n = 0; n < x.cols(); n += 7)
    CHECK(potential(k, x.col(n), c, mu, &m) == doctest::Approx(pot(n)).epsilon(1e-12));
}

TEST_CASE("mutual energy examples") {
  const Condenser one({plate_of(Eigen::MatrixXd::Zero(1, 1))});
  const KernelMatrix g = assemble_matrix(KernelSpec::gaussian(1.0), one);
  CondenserMeasure unit;
  unit.weights = {vec({1.0})};
  CHECK(mutual_energy(g, unit, unit) == doctest::Approx(1.0));

  // Uniform shells r = 1 (+) and R = 2 (-): the signed mutual energy is
  // minus the constant potential of the outer shell on the inner one.
  const Index n = 1000;
  const Condenser c = shells(n, 1.0, 2.0);
  const KernelMatrix m = assemble_matrix(KernelSpec::newton(3), c);
  CondenserMeasure inner = CondenserMeasure::zeros(c.layout());
  CondenserMeasure outer = inner;
  inner.weights[0].setConstant(1.0 / double(n));
  outer.weights[1].setConstant(1.0 / double(n));
  const double expected = -condcap::testing::shell_mutual_energy_quadrature(1.0, 2.0);
  CHECK(std::abs(mutual_energy(m, inner, outer) - expected) < 0.01);
  CHECK(mutual_energy(m, inner, outer) == doctest::Approx(mutual_energy(m, outer, inner)));

  CondenserMeasure wrong;
  wrong.weights = {vec({1.0})};
  CHECK_THROWS_AS(mutual_energy(m, wrong, inner), ContractError);
}

TEST_CASE("assembly: two-node gaussian matrix") {
  Eigen::MatrixXd x(1, 2);
  x << 0.0, 1.0;
  const Condenser c({plate_of(x)});
  const KernelMatrix m = assemble_matrix(KernelSpec::gaussian(1.0), c);
  Eigen::Matrix2d expected;
  expected << 1.0, std::exp(-1.0), std::exp(-1.0), 1.0;
  CHECK((m.entries - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(m.loading == 0.0);
  CHECK_FALSE(m.regularized);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(expected);
  CHECK(m.min_eigenvalue_estimate == doctest::Approx(es.eigenvalues()(0)).epsilon(1e-4));
}

TEST_CASE("assembly: effective-radius diagonal for two Newton nodes") {
  Eigen::MatrixXd x(3, 2);
  x << 0, 1, 0, 0, 0, 0;
  const Condenser c({plate_of(x)});
  const KernelMatrix m = assemble_matrix(KernelSpec::newton(3), c);
  CHECK(m.entries(0, 0) == doctest::Approx(2.0));
  CHECK(m.entries(1, 1) == doctest::Approx(2.0));
  CHECK(m.entries(0, 1) == doctest::Approx(1.0));
  CHECK(m.regularized);
}

TEST_CASE("assembly properties on a sphere capacitor") {
  const Condenser c = shells(200, 1.0, 2.0);
  const KernelSpec k = KernelSpec::newton(3);
  const KernelMatrix m = assemble_matrix(k, c);
  CHECK((m.entries - m.entries.transpose()).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::MatrixXd x = c.all_nodes();
  for (Index a = 0; a < x.cols(); a += 13)
    for (Index b = 0; b < x.cols(); b += 17)
      if (a != b) CHECK(m.entries(a, b) == k(x.col(a), x.col(b)));
  Eigen::LLT<Eigen::MatrixXd> llt(m.entries);
  CHECK(llt.info() == Eigen::Success);
  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    Eigen::VectorXd v(x.cols());
    for (Index j = 0; j < v.size(); ++j) v(j) = uniform01(rng) - 0.5;
    CHECK(v.dot(m.entries * v) >= -1e-10 * v.squaredNorm());
  }
}

TEST_CASE("assembly failures") {
  Eigen::MatrixXd dup(3, 2);
  dup << 0, 0, 0, 0, 1, 1;
  CHECK_THROWS_AS(assemble_matrix(KernelSpec::newton(3), Condenser({plate_of(dup)})),
                  GeometryError);

  Eigen::MatrixXd x(3, 2);
  x << 0, 1, 0, 0, 0, 0;
  DiagonalRule exact;
  exact.mode = DiagonalMode::exact;
  CHECK_THROWS_AS(assemble_matrix(KernelSpec::newton(3), Condenser({plate_of(x)}), exact),
                  ConfigError);
  CHECK_NOTHROW(assemble_matrix(KernelSpec::gaussian(1.0), Condenser({plate_of(x)}), exact));
  CHECK_THROWS_AS(assemble_matrix(KernelSpec::newton(4), Condenser({plate_of(x)})), ConfigError);

  // A tight pair next to a far node: averaging the spacing over all three
  // nodes leaves the pair's diagonal far below their mutual interaction.
  Eigen::MatrixXd cluster(3, 3);
  cluster << 0, 0.01, 10, 0, 0, 0, 0, 0, 0;
  DiagonalRule smoothed;
  smoothed.smoothing_neighbours = 2;
  CHECK_THROWS_AS(assemble_matrix(KernelSpec::newton(3), Condenser({plate_of(cluster)}), smoothed),
                  NumericalError);
  DiagonalRule negative;
  negative.smoothing_neighbours = -1;
  CHECK_THROWS_AS(assemble_matrix(KernelSpec::newton(3), Condenser({plate_of(x)}), negative),
                  ConfigError);
}

TEST_CASE("diagonal spacings: literal rule equals nearest-neighbour distances") {
  const Condenser c = shells(80, 1.0, 2.0);
  DiagonalRule literal;
  literal.smoothing_neighbours = 0;
  CHECK((diagonal_spacings(c, literal) - nearest_neighbour_distances(c)).cwiseAbs().maxCoeff() ==
        0.0);
  const Eigen::VectorXd nn = nearest_neighbour_distances(c);
  const Eigen::VectorXd sm = diagonal_spacings(c, DiagonalRule{});
  CHECK(sm.minCoeff() >= nn.minCoeff() - 1e-15);
  CHECK(sm.maxCoeff() <= nn.maxCoeff() + 1e-15);
}

TEST_CASE("restricted matrix is the principal submatrix") {
  const Condenser c = shells(30, 1.0, 2.0);
  const KernelMatrix m = assemble_matrix(KernelSpec::newton(3), c);
  const KernelMatrix r = m.restricted({{0, 4, 9}, {2, 29}});
  REQUIRE(r.size() == 5);
  CHECK(r.entries(1, 2) == m.entries(4, 9));
  CHECK(r.entries(3, 4) == m.entries(32, 59));
  CHECK(r.entries(0, 3) == m.entries(0, 32));
  CHECK(r.layout.signs == std::vector<int>{1, -1});
  CHECK_THROWS_AS(m.restricted({{0}}), ContractError);
  CHECK_THROWS_AS(m.restricted({{0}, {30}}), ContractError);
}

TEST_CASE("eigenvalue estimates match a dense eigensolver") {
  Rng rng(5);
  Eigen::MatrixXd b(40, 40);
  for (Index i = 0; i < 40; ++i)
    for (Index j = 0; j < 40; ++j) b(i, j) = uniform01(rng) - 0.5;
  const Eigen::MatrixXd a = b * b.transpose() + 0.1 * Eigen::MatrixXd::Identity(40, 40);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  CHECK(largest_eigenvalue(a).value ==
        doctest::Approx(es.eigenvalues()(39)).epsilon(1e-4));
  CHECK(smallest_eigenvalue(a).value ==
        doctest::Approx(es.eigenvalues()(0)).epsilon(1e-4));
}
