#include <doctest.h>

#include <cmath>

#include "condcap/error.hpp"
#include "condcap/oracles.hpp"
#include "condcap/solver.hpp"
#include "support.hpp"

using namespace condcap;
namespace t = condcap::testing;

namespace {

Plate plate_of(const Eigen::MatrixXd& nodes, int sign = 1) {
  Plate p;
  p.sign = sign;
  p.nodes = nodes;
  p.generator = PointList{nodes};
  return p;
}

// Two plates of two nodes each in the plane, opposite signs.
t::Instance two_by_two() {
  Eigen::MatrixXd p(2, 2), q(2, 2);
  p << 0.0, 0.0, 0.0, 0.8;
  q << 1.0, 1.3, 0.2, 0.9;
  return t::make_instance({plate_of(p, 1), plate_of(q, -1)}, KernelSpec::gaussian(1.0),
                          {Eigen::Vector2d(1.0, 1.5), Eigen::Vector2d(0.7, 1.0)},
                          Eigen::Vector2d(1.0, 0.8));
}

}  // namespace

TEST_CASE("sphere capacitor formula agrees with shell quadrature") {
  for (auto [r, big_r] : {std::pair{1.0, 2.0}, std::pair{0.5, 3.0}, std::pair{2.0, 2.5}}) {
    const double energy = t::shell_potential_quadrature(r, r) +
                          t::shell_potential_quadrature(big_r, big_r) -
                          2.0 * t::shell_potential_quadrature(r, big_r);
    const OracleResult o = sphere_capacitor_oracle(r, big_r);
    CHECK(std::abs(o.capacity * energy - 1.0) < 1e-6);
    CHECK(o.min_energy == doctest::Approx(energy).epsilon(1e-6));
  }
}

TEST_CASE("sphere capacitor oracle examples") {
  const OracleResult o = sphere_capacitor_oracle(1.0, 2.0);
  CHECK(o.capacity == doctest::Approx(2.0));
  REQUIRE(o.constants.size() == 2);
  CHECK(o.constants[0] == 1.0);
  CHECK(o.constants[1] == 0.0);
  CHECK_FALSE(o.provenance.empty());
  CHECK_FALSE(o.distribution_descriptor.empty());
  CHECK(sphere_capacitor_oracle(2.0, 4.0).capacity == doctest::Approx(4.0));

  const double big = 1e6;
  const double limit = sphere_capacitor_oracle(1.0, big).capacity;
  const double ball = ball_capacity_oracle(1.0).capacity;
  CHECK(std::abs(limit - ball) / ball < 2.0 / big);

  for (double s : {0.5, 3.0, 10.0})
    CHECK(sphere_capacitor_oracle(s * 1.0, s * 2.0).capacity == s * sphere_capacitor_oracle(1.0, 2.0).capacity);

  CHECK_THROWS_AS(sphere_capacitor_oracle(2.0, 1.0), ContractError);
  CHECK_THROWS_AS(sphere_capacitor_oracle(1.0, 1.0), ContractError);
  CHECK_THROWS_AS(sphere_capacitor_oracle(0.0, 1.0), ContractError);
  CHECK_THROWS_AS(sphere_capacitor_oracle(1.0, 2.0, 4), ContractError);
}

TEST_CASE("ball capacity oracle") {
  CHECK(ball_capacity_oracle(1.0).capacity == doctest::Approx(1.0));
  CHECK(ball_capacity_oracle(3.0).capacity == doctest::Approx(3.0));
  CHECK(ball_capacity_oracle(1.0).constants == std::vector<double>{1.0});
  CHECK(1.0 / t::shell_potential_quadrature(3.0, 3.0) == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("grid oracle: symmetric pair") {
  Eigen::MatrixXd x(1, 2);
  x << 0.0, 1.0;
  const auto inst = t::make_instance({plate_of(x)}, KernelSpec::gaussian(1.0),
                                     {Eigen::Vector2d::Ones()}, Eigen::VectorXd::Ones(1));
  const OracleResult o = grid_search_oracle(inst.matrix, inst.condenser, inst.weights, 1e-3);
  CHECK(o.argmin.weights[0](0) == doctest::Approx(0.5));
  CHECK(o.argmin.weights[0](1) == doctest::Approx(0.5));
  CHECK(o.constants[0] == doctest::Approx(1.0));
}

TEST_CASE("grid oracle: two plates of two nodes match the solver") {
  const auto inst = two_by_two();
  const OracleResult o = grid_search_oracle(inst.matrix, inst.condenser, inst.weights, 1e-3);
  const SolveReport r = solve_min_energy(inst.matrix, inst.condenser, inst.weights);
  CHECK(std::abs(o.min_energy - r.min_energy) < 1e-3);
  CHECK(o.min_energy >= r.min_energy - 1e-12);
  CHECK(o.min_energy == doctest::Approx(t::signed_energy(inst.matrix, o.argmin.flat())));
  CHECK(is_feasible(o.argmin, inst.weights, 1e-12));
}

TEST_CASE("grid oracle: refinement never increases the minimum") {
  Rng rng(12);
  for (int s = 0; s < 6; ++s) {
    const auto inst = t::random_tiny_gaussian(rng);
    double prev = INFINITY;
    for (double res : {1e-2, 5e-3, 2.5e-3}) {
      const double e = grid_search_oracle(inst.matrix, inst.condenser, inst.weights, res).min_energy;
      CHECK(e <= prev + 1e-15);
      prev = e;
    }
  }
}

TEST_CASE("grid oracle: three nodes per plate on both plates") {
  Eigen::MatrixXd p(3, 3), q(3, 3);
  p << 0.0, 0.4, 0.1, 0.0, 0.2, 0.5, 0.0, 0.1, 0.3;
  q << 1.0, 1.2, 1.4, 0.3, 0.0, 0.6, 0.2, 0.5, 0.1;
  const auto inst = t::make_instance({plate_of(p, 1), plate_of(q, -1)}, KernelSpec::gaussian(0.8),
                                     {Eigen::Vector3d::Ones(), Eigen::Vector3d(1.0, 1.2, 0.9)},
                                     Eigen::Vector2d(1.0, 1.0));
  const OracleResult o = grid_search_oracle(inst.matrix, inst.condenser, inst.weights, 1e-3);
  const SolveReport r = solve_min_energy(inst.matrix, inst.condenser, inst.weights);
  CHECK(std::abs(o.min_energy - r.min_energy) < 1e-3);
  CHECK(o.min_energy >= r.min_energy - 1e-12);
  CHECK(o.provenance.find("face") != std::string::npos);
}

TEST_CASE("grid oracle: single plate agrees with an independent enumeration") {
  Eigen::MatrixXd x(2, 3);
  x << 0.0, 0.7, 0.2, 0.0, 0.1, 0.9;
  const auto inst = t::make_instance({plate_of(x)}, KernelSpec::gaussian(1.0),
                                     {Eigen::Vector3d::Ones()}, Eigen::VectorXd::Ones(1));
  const OracleResult o = grid_search_oracle(inst.matrix, inst.condenser, inst.weights, 1e-2);
  CHECK(o.min_energy ==
        doctest::Approx(t::single_plate_grid_minimum(inst.matrix.entries, 100)).epsilon(1e-12));
}

TEST_CASE("grid oracle contract") {
  const auto inst = two_by_two();
  CHECK_THROWS_AS(grid_search_oracle(inst.matrix, inst.condenser, inst.weights, 0.05), ContractError);
  const Eigen::MatrixXd four = generate_nodes(BallVolume{}, 4, 1);
  const auto big = t::make_instance({plate_of(four)}, KernelSpec::gaussian(1.0),
                                    {Eigen::VectorXd::Ones(4)}, Eigen::VectorXd::Ones(1));
  CHECK_THROWS_AS(grid_search_oracle(big.matrix, big.condenser, big.weights, 1e-2), ContractError);
  Eigen::MatrixXd x(1, 1);
  x << 0.0;
  Eigen::MatrixXd y(1, 1), z(1, 1);
  y << 1.0;
  z << 2.0;
  const auto three = t::make_instance({plate_of(x), plate_of(y), plate_of(z, -1)},
                                      KernelSpec::gaussian(1.0),
                                      {Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1),
                                       Eigen::VectorXd::Ones(1)},
                                      Eigen::Vector3d::Ones());
  CHECK_THROWS_AS(grid_search_oracle(three.matrix, three.condenser, three.weights, 1e-2),
                  ContractError);
}
