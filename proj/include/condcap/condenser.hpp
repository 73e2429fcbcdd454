#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace condcap {

using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Node generators
// ---------------------------------------------------------------------------

/// Surface of a sphere in R^3, Fibonacci-lattice layout.
struct SphereShell {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 1.0;
};

/// Solid ball in R^3, stratified (jittered) sampling of the volume.
struct BallVolume {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 1.0;
};

/// Axis-aligned box in R^d, stratified sampling.
struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

/// Spherical shell volume {inner <= |x - c| <= outer} in R^3, stratified sampling.
struct Annulus {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double inner_radius = 1.0;
  double outer_radius = 2.0;
};

/// Concentric Fibonacci spheres at radii inner_radius * ratio^j, j < layers.
/// `count` is the number of nodes per layer. Truncating to fewer layers
/// yields a sub-plate, which is how growing unbounded plates are modelled.
struct LayeredShell {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double inner_radius = 1.0;
  double ratio = 2.0;
  int layers = 1;
};

/// Explicit points, one per column.
struct PointList {
  Eigen::MatrixXd points;
};

using Generator = std::variant<SphereShell, BallVolume, Box, Annulus, LayeredShell, PointList>;

std::string generator_name(const Generator& generator);

/// Deterministic node cloud (one point per column). Throws ConfigError on
/// degenerate geometry or count < 1.
Eigen::MatrixXd generate_nodes(const Generator& generator, Index count, std::uint64_t seed);

/// Greedy farthest-point ordering starting from column 0. Every prefix of
/// the returned permutation is a well-spread subset, so prefixes of
/// increasing length form a nested family of node sets.
std::vector<Index> farthest_point_order(const Eigen::MatrixXd& points);

// ---------------------------------------------------------------------------
// Condenser
// ---------------------------------------------------------------------------

struct Plate {
  int sign = 1;  // +1 or -1
  Eigen::MatrixXd nodes;  // dim x N
  Generator generator = PointList{};

  Index size() const { return nodes.cols(); }
};

/// Flat ordering of all condenser nodes: plates concatenated in order.
struct PlateLayout {
  std::vector<Index> sizes;
  std::vector<Index> offsets;
  std::vector<int> signs;

  Index total() const { return offsets.empty() ? 0 : offsets.back() + sizes.back(); }
  std::size_t plates() const { return sizes.size(); }
  bool operator==(const PlateLayout&) const = default;
};

class Condenser {
 public:
  Condenser() = default;
  explicit Condenser(std::vector<Plate> plates);

  const std::vector<Plate>& plates() const { return plates_; }
  const Plate& plate(std::size_t i) const { return plates_.at(i); }
  std::size_t size() const { return plates_.size(); }
  int dim() const;
  Index total_nodes() const { return layout_.total(); }
  const PlateLayout& layout() const { return layout_; }

  /// Number of positively / negatively signed plates (m and p).
  int positive_count() const;
  int negative_count() const;

  /// All nodes as one dim x total matrix in layout order.
  Eigen::MatrixXd all_nodes() const;

 private:
  std::vector<Plate> plates_;
  PlateLayout layout_;
};

// ---------------------------------------------------------------------------
// Weight function g and constraint vector a
// ---------------------------------------------------------------------------

class WeightSpec {
 public:
  WeightSpec() = default;

  static WeightSpec constant(const Condenser& condenser, double g, Eigen::VectorXd a);
  static WeightSpec table(const Condenser& condenser, std::vector<Eigen::VectorXd> g,
                          Eigen::VectorXd a);

  const std::vector<Eigen::VectorXd>& g() const { return g_; }
  const Eigen::VectorXd& g(std::size_t plate) const { return g_.at(plate); }
  const Eigen::VectorXd& a() const { return a_; }
  double a(std::size_t plate) const { return a_(static_cast<Index>(plate)); }
  double g_min() const;

  /// Same g, constraint vector multiplied by `factor`.
  WeightSpec scaled(double factor) const;

  /// g restricted to the given per-plate node subsets.
  WeightSpec restricted(const std::vector<std::vector<Index>>& subsets) const;

 private:
  WeightSpec(std::vector<Eigen::VectorXd> g, Eigen::VectorXd a);

  std::vector<Eigen::VectorXd> g_;
  Eigen::VectorXd a_;
};

// ---------------------------------------------------------------------------
// Measures on the plates
// ---------------------------------------------------------------------------

/// Per-plate nonnegative weights aligned with plate nodes. Plays the role of
/// every measure attached to a condenser (minimizers, dual candidates, probes).
struct CondenserMeasure {
  std::vector<Eigen::VectorXd> weights;

  static CondenserMeasure zeros(const PlateLayout& layout);
  static CondenserMeasure from_flat(const Eigen::VectorXd& flat, const PlateLayout& layout);

  Eigen::VectorXd flat() const;
  PlateLayout shape() const;
  CondenserMeasure scaled(double factor) const;
  bool nonnegative() const;
};

enum class FeasibilityClass { equality, inequality };

/// Summary returned by validate(). Invalid condensers throw GeometryError.
struct ValidationReport {
  double cross_sign_distance = 0.0;  // +inf when there are no negative plates
  double min_intra_plate_distance = 0.0;
  std::vector<Index> plate_sizes;
  int positive_plates = 0;
  int negative_plates = 0;
  double g_min = 0.0;
  bool positive_capacity = false;
};

inline constexpr double kCrossSignTolerance = 1e-12;

ValidationReport validate(const Condenser& condenser, const WeightSpec& weights);

/// Smallest distance between a node of a positive plate and a node of a
/// negative plate (+inf if either side is empty).
double cross_sign_distance(const Condenser& condenser);

/// Euclidean projection of y onto {w >= 0, g.w = a} (sort-and-threshold).
Eigen::VectorXd project_weighted_simplex(const Eigen::VectorXd& y, const Eigen::VectorXd& g,
                                         double a);

/// Euclidean projection of y onto {w >= 0, g.w <= a}.
Eigen::VectorXd project_weighted_simplex_capped(const Eigen::VectorXd& y,
                                                const Eigen::VectorXd& g, double a);

CondenserMeasure project_feasible(const CondenserMeasure& measure, const WeightSpec& weights,
                                  FeasibilityClass mode);

/// Sum_k g(x_k) w_k over plate i.
double plate_integral(const CondenserMeasure& measure, const WeightSpec& weights, std::size_t i);

/// True when every plate integral matches a_i to relative tolerance `tol`
/// and all weights are nonnegative.
bool is_feasible(const CondenserMeasure& measure, const WeightSpec& weights, double tol);

}  // namespace condcap
