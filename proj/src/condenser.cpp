#include "condcap/condenser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Geometry>

#include "condcap/error.hpp"
#include "condcap/random.hpp"

namespace condcap {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Eigen::Matrix3d seeded_rotation(std::uint64_t seed) {
  if (seed == 0) return Eigen::Matrix3d::Identity();
  Rng rng(seed);
  // Shoemake's uniform random unit quaternion.
  const double u1 = uniform01(rng), u2 = uniform01(rng), u3 = uniform01(rng);
  const double s1 = std::sqrt(1.0 - u1), s2 = std::sqrt(u1);
  const double t1 = 2.0 * std::numbers::pi * u2, t2 = 2.0 * std::numbers::pi * u3;
  Eigen::Quaterniond q(s2 * std::cos(t2), s1 * std::sin(t1), s1 * std::cos(t1), s2 * std::sin(t2));
  return q.normalized().toRotationMatrix();
}

Eigen::MatrixXd fibonacci_sphere(Index count, const Eigen::Vector3d& center, double radius,
                                 std::uint64_t rotation_seed) {
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const Eigen::Matrix3d rot = seeded_rotation(rotation_seed);
  Eigen::MatrixXd out(3, count);
  for (Index i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(count);
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * static_cast<double>(i);
    Eigen::Vector3d p(rho * std::cos(phi), rho * std::sin(phi), z);
    p = rot * p;
    p.normalize();
    out.col(i) = center + radius * p;
  }
  return out;
}

// n points of [0,1)^dim, one per distinct cell of a k^dim grid, jittered.
Eigen::MatrixXd stratified_unit_cube(Index n, int dim, Rng& rng) {
  Index k = std::max<Index>(1, static_cast<Index>(std::floor(std::pow(double(n), 1.0 / dim))));
  auto cells_of = [dim](Index side) {
    Index c = 1;
    for (int d = 0; d < dim; ++d) c *= side;
    return c;
  };
  while (cells_of(k) < n) ++k;
  const Index cells = cells_of(k);
  std::vector<Index> ids(static_cast<std::size_t>(cells));
  std::iota(ids.begin(), ids.end(), Index{0});
  for (Index i = 0; i < n; ++i) {  // partial Fisher-Yates
    const Index j = i + static_cast<Index>(rng() % static_cast<std::uint64_t>(cells - i));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  Eigen::MatrixXd out(dim, n);
  for (Index i = 0; i < n; ++i) {
    Index id = ids[static_cast<std::size_t>(i)];
    for (int d = 0; d < dim; ++d) {
      const Index cell = id % k;
      id /= k;
      out(d, i) = (static_cast<double>(cell) + uniform01(rng)) / static_cast<double>(k);
    }
  }
  return out;
}

// Volume-uniform map from the unit cube to {r0 <= |x| <= r1} in R^3.
Eigen::MatrixXd stratified_shell(Index n, const Eigen::Vector3d& center, double r0, double r1,
                                 Rng& rng) {
  const Eigen::MatrixXd cube = stratified_unit_cube(n, 3, rng);
  const double v0 = r0 * r0 * r0, v1 = r1 * r1 * r1;
  Eigen::MatrixXd out(3, n);
  for (Index i = 0; i < n; ++i) {
    const double r = std::cbrt(v0 + cube(0, i) * (v1 - v0));
    const double z = 2.0 * cube(1, i) - 1.0;
    const double phi = 2.0 * std::numbers::pi * cube(2, i);
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    out.col(i) = center + r * Eigen::Vector3d(rho * std::cos(phi), rho * std::sin(phi), z);
  }
  return out;
}

void require_positive(double value, const char* what) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    std::ostringstream os;
    os << "generator parameter '" << what << "' must be positive and finite, got " << value;
    throw ConfigError(os.str());
  }
}

}  // namespace

std::string generator_name(const Generator& generator) {
  return std::visit(Overloaded{
                        [](const SphereShell&) { return std::string("sphere"); },
                        [](const BallVolume&) { return std::string("ball"); },
                        [](const Box&) { return std::string("box"); },
                        [](const Annulus&) { return std::string("annulus"); },
                        [](const LayeredShell&) { return std::string("layered_shell"); },
                        [](const PointList&) { return std::string("points"); },
                    },
                    generator);
}

Eigen::MatrixXd generate_nodes(const Generator& generator, Index count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("node count must be at least 1");
  Rng rng(seed);
  return std::visit(
      Overloaded{
          [&](const SphereShell& s) -> Eigen::MatrixXd {
            require_positive(s.radius, "radius");
            return fibonacci_sphere(count, s.center, s.radius, seed);
          },
          [&](const BallVolume& b) -> Eigen::MatrixXd {
            require_positive(b.radius, "radius");
            return stratified_shell(count, b.center, 0.0, b.radius, rng);
          },
          [&](const Box& b) -> Eigen::MatrixXd {
            if (b.lower.size() == 0 || b.lower.size() != b.upper.size())
              throw ConfigError("box bounds must be nonempty and of equal dimension");
            const Eigen::VectorXd extent = b.upper - b.lower;
            for (Index d = 0; d < extent.size(); ++d) require_positive(extent(d), "box extent");
            Eigen::MatrixXd cube = stratified_unit_cube(count, static_cast<int>(extent.size()), rng);
            return (extent.asDiagonal() * cube).colwise() + b.lower;
          },
          [&](const Annulus& a) -> Eigen::MatrixXd {
            require_positive(a.inner_radius, "inner_radius");
            require_positive(a.outer_radius - a.inner_radius, "outer_radius - inner_radius");
            return stratified_shell(count, a.center, a.inner_radius, a.outer_radius, rng);
          },
          [&](const LayeredShell& l) -> Eigen::MatrixXd {
            require_positive(l.inner_radius, "inner_radius");
            require_positive(l.ratio - 1.0, "ratio - 1");
            if (l.layers < 1) throw ConfigError("layered_shell needs at least one layer");
            Eigen::MatrixXd out(3, count * l.layers);
            double radius = l.inner_radius;
            for (int j = 0; j < l.layers; ++j) {
              out.middleCols(j * count, count) =
                  fibonacci_sphere(count, l.center, radius, seed * 1000003ULL + std::uint64_t(j));
              radius *= l.ratio;
            }
            return out;
          },
          [&](const PointList& p) -> Eigen::MatrixXd {
            if (p.points.cols() != count) {
              std::ostringstream os;
              os << "explicit point list has " << p.points.cols() << " points but count is "
                 << count;
              throw ConfigError(os.str());
            }
            return p.points;
          },
      },
      generator);
}

std::vector<Index> farthest_point_order(const Eigen::MatrixXd& points) {
  const Index n = points.cols();
  std::vector<Index> order;
  if (n == 0) return order;
  order.reserve(static_cast<std::size_t>(n));
  Eigen::VectorXd dist = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  Index next = 0;
  for (Index step = 0; step < n; ++step) {
    order.push_back(next);
    taken[static_cast<std::size_t>(next)] = 1;
    Index best = -1;
    double best_dist = -1.0;
    for (Index j = 0; j < n; ++j) {
      if (taken[static_cast<std::size_t>(j)]) continue;
      dist(j) = std::min(dist(j), (points.col(j) - points.col(next)).norm());
      if (dist(j) > best_dist) {
        best_dist = dist(j);
        best = j;
      }
    }
    next = best;
  }
  return order;
}

// ---------------------------------------------------------------------------

Condenser::Condenser(std::vector<Plate> plates) : plates_(std::move(plates)) {
  Index offset = 0;
  for (const Plate& p : plates_) {
    if (p.sign != 1 && p.sign != -1) throw ConfigError("plate sign must be +1 or -1");
    layout_.sizes.push_back(p.size());
    layout_.offsets.push_back(offset);
    layout_.signs.push_back(p.sign);
    offset += p.size();
  }
  if (!plates_.empty()) {
    const Index d = plates_.front().nodes.rows();
    for (const Plate& p : plates_)
      if (p.nodes.rows() != d && p.size() > 0)
        throw ConfigError("all plates must live in the same dimension");
  }
}

int Condenser::dim() const {
  for (const Plate& p : plates_)
    if (p.size() > 0) return static_cast<int>(p.nodes.rows());
  return 0;
}

int Condenser::positive_count() const {
  return static_cast<int>(std::count_if(plates_.begin(), plates_.end(),
                                        [](const Plate& p) { return p.sign > 0; }));
}

int Condenser::negative_count() const {
  return static_cast<int>(size()) - positive_count();
}

Eigen::MatrixXd Condenser::all_nodes() const {
  Eigen::MatrixXd out(dim(), total_nodes());
  for (std::size_t i = 0; i < plates_.size(); ++i)
    out.middleCols(layout_.offsets[i], layout_.sizes[i]) = plates_[i].nodes;
  return out;
}

// ---------------------------------------------------------------------------

WeightSpec::WeightSpec(std::vector<Eigen::VectorXd> g, Eigen::VectorXd a)
    : g_(std::move(g)), a_(std::move(a)) {
  for (std::size_t i = 0; i < g_.size(); ++i) {
    for (Index k = 0; k < g_[i].size(); ++k)
      if (!(g_[i](k) > 0.0) || !std::isfinite(g_[i](k))) {
        std::ostringstream os;
        os << "g must be positive at every node; plate " << i << " node " << k << " has "
           << g_[i](k);
        throw ConfigError(os.str());
      }
  }
  for (Index i = 0; i < a_.size(); ++i)
    if (!(a_(i) > 0.0) || !std::isfinite(a_(i))) {
      std::ostringstream os;
      os << "a[" << i << "] must be positive, got " << a_(i);
      throw ConfigError(os.str());
    }
}

WeightSpec WeightSpec::constant(const Condenser& condenser, double g, Eigen::VectorXd a) {
  std::vector<Eigen::VectorXd> table;
  for (const Plate& p : condenser.plates()) table.push_back(Eigen::VectorXd::Constant(p.size(), g));
  return WeightSpec::table(condenser, std::move(table), std::move(a));
}

WeightSpec WeightSpec::table(const Condenser& condenser, std::vector<Eigen::VectorXd> g,
                             Eigen::VectorXd a) {
  if (static_cast<std::size_t>(a.size()) != condenser.size()) {
    std::ostringstream os;
    os << "a has " << a.size() << " entries but the condenser has " << condenser.size()
       << " plates";
    throw ConfigError(os.str());
  }
  if (g.size() != condenser.size()) throw ConfigError("g table must have one entry per plate");
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g[i].size() != condenser.plate(i).size()) {
      std::ostringstream os;
      os << "g table for plate " << i << " has " << g[i].size() << " values but the plate has "
         << condenser.plate(i).size() << " nodes";
      throw ConfigError(os.str());
    }
  return WeightSpec(std::move(g), std::move(a));
}

double WeightSpec::g_min() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& gi : g_)
    if (gi.size() > 0) m = std::min(m, gi.minCoeff());
  return m;
}

WeightSpec WeightSpec::scaled(double factor) const { return WeightSpec(g_, a_ * factor); }

WeightSpec WeightSpec::restricted(const std::vector<std::vector<Index>>& subsets) const {
  if (subsets.size() != g_.size()) throw ContractError("restriction needs one subset per plate");
  std::vector<Eigen::VectorXd> g(g_.size());
  for (std::size_t i = 0; i < g_.size(); ++i) {
    g[i].resize(static_cast<Index>(subsets[i].size()));
    for (std::size_t k = 0; k < subsets[i].size(); ++k) g[i](Index(k)) = g_[i](subsets[i][k]);
  }
  return WeightSpec(std::move(g), a_);
}

// ---------------------------------------------------------------------------

CondenserMeasure CondenserMeasure::zeros(const PlateLayout& layout) {
  CondenserMeasure m;
  for (Index n : layout.sizes) m.weights.push_back(Eigen::VectorXd::Zero(n));
  return m;
}

CondenserMeasure CondenserMeasure::from_flat(const Eigen::VectorXd& flat, const PlateLayout& layout) {
  if (flat.size() != layout.total()) throw ContractError("flat weight vector has wrong length");
  CondenserMeasure m;
  for (std::size_t i = 0; i < layout.plates(); ++i)
    m.weights.push_back(flat.segment(layout.offsets[i], layout.sizes[i]));
  return m;
}

Eigen::VectorXd CondenserMeasure::flat() const {
  Index total = 0;
  for (const auto& w : weights) total += w.size();
  Eigen::VectorXd out(total);
  Index offset = 0;
  for (const auto& w : weights) {
    out.segment(offset, w.size()) = w;
    offset += w.size();
  }
  return out;
}

PlateLayout CondenserMeasure::shape() const {
  PlateLayout layout;
  Index offset = 0;
  for (const auto& w : weights) {
    layout.sizes.push_back(w.size());
    layout.offsets.push_back(offset);
    layout.signs.push_back(1);
    offset += w.size();
  }
  return layout;
}

CondenserMeasure CondenserMeasure::scaled(double factor) const {
  CondenserMeasure m = *this;
  for (auto& w : m.weights) w *= factor;
  return m;
}

bool CondenserMeasure::nonnegative() const {
  return std::all_of(weights.begin(), weights.end(),
                     [](const Eigen::VectorXd& w) { return w.size() == 0 || w.minCoeff() >= 0.0; });
}

// ---------------------------------------------------------------------------

double cross_sign_distance(const Condenser& condenser) {
  double best = std::numeric_limits<double>::infinity();
  for (const Plate& p : condenser.plates()) {
    if (p.sign < 0) continue;
    for (const Plate& q : condenser.plates()) {
      if (q.sign > 0) continue;
      for (Index k = 0; k < p.size(); ++k)
        best = std::min(best, (q.nodes.colwise() - p.nodes.col(k)).colwise().norm().minCoeff());
    }
  }
  return best;
}

ValidationReport validate(const Condenser& condenser, const WeightSpec& weights) {
  ValidationReport report;
  if (condenser.size() == 0) throw GeometryError("condenser has no plates");
  for (std::size_t i = 0; i < condenser.size(); ++i) {
    report.plate_sizes.push_back(condenser.plate(i).size());
    if (condenser.plate(i).size() == 0) {
      std::ostringstream os;
      os << "condenser invalid: plate " << i << " is empty";
      throw GeometryError(os.str());
    }
  }
  report.positive_plates = condenser.positive_count();
  report.negative_plates = condenser.negative_count();
  if (report.positive_plates < 1)
    throw GeometryError("condenser invalid: at least one positive plate is required");

  report.min_intra_plate_distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < condenser.size(); ++i) {
    const Eigen::MatrixXd& x = condenser.plate(i).nodes;
    for (Index k = 0; k < x.cols(); ++k)
      for (Index l = k + 1; l < x.cols(); ++l) {
        const double d = (x.col(k) - x.col(l)).norm();
        if (d == 0.0) {
          std::ostringstream os;
          os << "plate " << i << " has duplicate nodes " << k << " and " << l;
          throw GeometryError(os.str());
        }
        report.min_intra_plate_distance = std::min(report.min_intra_plate_distance, d);
      }
  }

  report.cross_sign_distance = cross_sign_distance(condenser);
  if (report.cross_sign_distance < kCrossSignTolerance) {
    std::ostringstream os;
    os << "condenser invalid: opposite-signed plates touch (distance "
       << report.cross_sign_distance << ")";
    throw GeometryError(os.str());
  }

  if (weights.g().size() != condenser.size() ||
      static_cast<std::size_t>(weights.a().size()) != condenser.size())
    throw ContractError("weight spec does not match the condenser's plates");
  for (std::size_t i = 0; i < condenser.size(); ++i)
    if (weights.g(i).size() != condenser.plate(i).size())
      throw ContractError("g table does not match plate node count");
  report.g_min = weights.g_min();
  // Every node of a finite plate carries positive capacity, so nonempty
  // plates are enough for a nonzero discrete capacity.
  report.positive_capacity = true;
  return report;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd project_weighted_simplex(const Eigen::VectorXd& y, const Eigen::VectorXd& g,
                                         double a) {
  const Index n = y.size();
  if (g.size() != n) throw ContractError("projection: g and y differ in length");
  if (n == 0) throw ContractError("projection onto an empty plate");
  // w = max(0, y - tau g) with sum g w = a; nodes enter in order of y/g.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(),
            [&](Index p, Index q) { return y(p) / g(p) > y(q) / g(q); });
  double sum_gy = 0.0, sum_gg = 0.0, tau = 0.0;
  for (Index j = 0; j < n; ++j) {
    const Index k = order[static_cast<std::size_t>(j)];
    const double sgy = sum_gy + g(k) * y(k);
    const double sgg = sum_gg + g(k) * g(k);
    const double candidate = (sgy - a) / sgg;
    if (j > 0 && !(y(k) / g(k) > candidate)) break;
    sum_gy = sgy;
    sum_gg = sgg;
    tau = candidate;
  }
  return (y - tau * g).cwiseMax(0.0);
}

Eigen::VectorXd project_weighted_simplex_capped(const Eigen::VectorXd& y,
                                                const Eigen::VectorXd& g, double a) {
  Eigen::VectorXd clipped = y.cwiseMax(0.0);
  if (g.dot(clipped) <= a) return clipped;
  return project_weighted_simplex(y, g, a);
}

CondenserMeasure project_feasible(const CondenserMeasure& measure, const WeightSpec& weights,
                                  FeasibilityClass mode) {
  if (measure.weights.size() != weights.g().size())
    throw ContractError("projection: measure and weight spec have different plate counts");
  CondenserMeasure out;
  out.weights.reserve(measure.weights.size());
  for (std::size_t i = 0; i < measure.weights.size(); ++i) {
    if (measure.weights[i].size() != weights.g(i).size())
      throw ContractError("projection: plate sizes differ");
    out.weights.push_back(mode == FeasibilityClass::equality
                              ? project_weighted_simplex(measure.weights[i], weights.g(i), weights.a(i))
                              : project_weighted_simplex_capped(measure.weights[i], weights.g(i),
                                                                weights.a(i)));
  }
  return out;
}

double plate_integral(const CondenserMeasure& measure, const WeightSpec& weights, std::size_t i) {
  if (i >= measure.weights.size() || i >= weights.g().size()) {
    std::ostringstream os;
    os << "plate index " << i << " out of range";
    throw ContractError(os.str());
  }
  if (measure.weights[i].size() != weights.g(i).size())
    throw ContractError("plate_integral: plate sizes differ");
  return weights.g(i).dot(measure.weights[i]);
}

bool is_feasible(const CondenserMeasure& measure, const WeightSpec& weights, double tol) {
  if (measure.weights.size() != weights.g().size() || !measure.nonnegative()) return false;
  for (std::size_t i = 0; i < measure.weights.size(); ++i) {
    if (measure.weights[i].size() != weights.g(i).size()) return false;
    if (std::abs(plate_integral(measure, weights, i) - weights.a(i)) > tol * weights.a(i))
      return false;
  }
  return true;
}

}  // namespace condcap
