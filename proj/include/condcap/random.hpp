#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace condcap {

// std::mt19937_64 output is pinned by the standard; the <random>
// distributions are not, so the few draws we need are done by hand to keep
// node clouds and probes bit-identical across standard libraries.
using Rng = std::mt19937_64;

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform on (0, 1].
inline double uniform_open01(Rng& rng) { return 1.0 - uniform01(rng); }

/// Uniform point of the simplex {t >= 0, sum t = 1} of dimension n - 1.
inline Eigen::VectorXd random_simplex_point(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd t(n);
  for (Eigen::Index k = 0; k < n; ++k) t(k) = -std::log(uniform_open01(rng));
  return t / t.sum();
}

}  // namespace condcap
