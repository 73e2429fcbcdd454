#include "condcap/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "condcap/error.hpp"

namespace condcap {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void bad_parameter(const std::string& what) { throw ConfigError("kernel: " + what); }

}  // namespace

KernelSpec::KernelSpec(KernelFamily family) : family_(std::move(family)) {
  std::visit(Overloaded{
                 [](const RieszKernel& k) {
                   if (k.dim < 1) bad_parameter("riesz dim must be >= 1");
                   if (!(k.alpha > 0.0 && k.alpha < k.dim))
                     bad_parameter("riesz alpha must satisfy 0 < alpha < dim");
                 },
                 [](const NewtonKernel& k) {
                   if (k.dim < 3) bad_parameter("newton kernel needs dim >= 3");
                 },
                 [](const GaussianKernel& k) {
                   if (!(k.width > 0.0) || !std::isfinite(k.width))
                     bad_parameter("gaussian width must be positive");
                 },
                 [](const GreenBallKernel& k) {
                   if (!(k.radius > 0.0) || !std::isfinite(k.radius))
                     bad_parameter("green_ball radius must be positive");
                   if (k.dim < 3) bad_parameter("green_ball needs dim >= 3");
                 },
             },
             family_);
}

std::string KernelSpec::name() const {
  return std::visit(Overloaded{
                        [](const RieszKernel&) { return std::string("riesz"); },
                        [](const NewtonKernel&) { return std::string("newton"); },
                        [](const GaussianKernel&) { return std::string("gaussian"); },
                        [](const GreenBallKernel&) { return std::string("green_ball"); },
                    },
                    family_);
}

bool KernelSpec::singular() const { return !std::holds_alternative<GaussianKernel>(family_); }

std::optional<int> KernelSpec::dim() const {
  return std::visit(Overloaded{
                        [](const RieszKernel& k) -> std::optional<int> { return k.dim; },
                        [](const NewtonKernel& k) -> std::optional<int> { return k.dim; },
                        [](const GaussianKernel&) -> std::optional<int> { return std::nullopt; },
                        [](const GreenBallKernel& k) -> std::optional<int> { return k.dim; },
                    },
                    family_);
}

double KernelSpec::riesz_power(double r, double exponent) const {
  if (r == 0.0) return kInfinity;
  if (exponent == -1.0) return 1.0 / r;
  return std::pow(r, exponent);
}

double KernelSpec::operator()(const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& y) const {
  if (x.size() != y.size()) throw ContractError("kernel: points of different dimension");
  const double r = (x - y).norm();
  return std::visit(
      Overloaded{
          [&](const RieszKernel& k) { return riesz_power(r, k.alpha - k.dim); },
          [&](const NewtonKernel& k) { return riesz_power(r, 2.0 - k.dim); },
          [&](const GaussianKernel& k) { return std::exp(-(r * r) / (k.width * k.width)); },
          [&](const GreenBallKernel& k) {
            const double exponent = 2.0 - k.dim;
            const double xr = x.norm(), yr = y.norm();
            if (!(xr < k.radius) || !(yr < k.radius))
              throw GeometryError("green_ball kernel: point outside the open ball");
            const double direct = riesz_power(r, exponent);
            if (direct == kInfinity) return kInfinity;
            // Image of y in the sphere: y* = R^2 y / |y|^2, weight (R/|y|)^(n-2).
            double image;
            if (yr == 0.0) {
              image = std::pow(k.radius, exponent);
            } else {
              const Eigen::VectorXd y_star = (k.radius * k.radius / (yr * yr)) * y;
              image = std::pow(k.radius / yr, -exponent) * std::pow((x - y_star).norm(), exponent);
            }
            return direct - image;
          },
      },
      family_);
}

double KernelSpec::effective_self_energy(const Eigen::Ref<const Eigen::VectorXd>& x,
                                         double h) const {
  if (!(h > 0.0)) throw GeometryError("effective radius needs a positive spacing");
  const double s = 0.5 * h;
  return std::visit(
      Overloaded{
          [&](const RieszKernel& k) { return riesz_power(s, k.alpha - k.dim); },
          [&](const NewtonKernel& k) { return riesz_power(s, 2.0 - k.dim); },
          [&](const GaussianKernel&) { return 1.0; },
          [&](const GreenBallKernel& k) {
            const double exponent = 2.0 - k.dim;
            const double xr = x.norm();
            if (!(xr < k.radius))
              throw GeometryError("green_ball kernel: point outside the open ball");
            double image;
            if (xr == 0.0) {
              image = std::pow(k.radius, exponent);
            } else {
              // |x - x*| for x* the image of x itself.
              const double dist = k.radius * k.radius / xr - xr;
              image = std::pow(k.radius / xr, -exponent) * std::pow(dist, exponent);
            }
            return std::pow(s, exponent) - image;
          },
      },
      family_);
}

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y) {
  return spec(x, y);
}

// ---------------------------------------------------------------------------

Eigen::VectorXd nearest_neighbour_distances(const Condenser& condenser) {
  const Eigen::MatrixXd all = condenser.all_nodes();
  const PlateLayout& layout = condenser.layout();
  Eigen::VectorXd h(layout.total());
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    const Eigen::MatrixXd& x = condenser.plate(i).nodes;
    for (Index k = 0; k < x.cols(); ++k) {
      double best = kInfinity;
      if (x.cols() > 1) {
        for (Index l = 0; l < x.cols(); ++l)
          if (l != k) best = std::min(best, (x.col(k) - x.col(l)).norm());
      } else {
        for (Index l = 0; l < all.cols(); ++l) {
          const double d = (all.col(l) - x.col(k)).norm();
          if (d > 0.0) best = std::min(best, d);
        }
      }
      if (best == 0.0) {
        std::ostringstream os;
        os << "plate " << i << " has duplicate nodes (node " << k << ")";
        throw GeometryError(os.str());
      }
      h(layout.offsets[i] + k) = best;
    }
  }
  return h;
}

Eigen::VectorXd diagonal_spacings(const Condenser& condenser, const DiagonalRule& rule) {
  const Eigen::VectorXd h = nearest_neighbour_distances(condenser);
  if (rule.smoothing_neighbours == 0) return h;
  const PlateLayout& layout = condenser.layout();
  Eigen::VectorXd out(h.size());
  std::vector<std::pair<double, Index>> dist;
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    const Eigen::MatrixXd& x = condenser.plate(i).nodes;
    const auto hi = h.segment(layout.offsets[i], layout.sizes[i]);
    const Index m = std::min<Index>(rule.smoothing_neighbours + 1, x.cols());
    for (Index k = 0; k < x.cols(); ++k) {
      dist.clear();
      for (Index l = 0; l < x.cols(); ++l) dist.emplace_back((x.col(k) - x.col(l)).squaredNorm(), l);
      std::nth_element(dist.begin(), dist.begin() + (m - 1), dist.end());
      double sum = 0.0;
      for (Index q = 0; q < m; ++q) sum += hi(dist[std::size_t(q)].second);
      out(layout.offsets[i] + k) = sum / double(m);
    }
  }
  return out;
}

KernelMatrix assemble_matrix(const KernelSpec& spec, const Condenser& condenser,
                             const DiagonalRule& rule) {
  if (auto d = spec.dim(); d && condenser.dim() != *d) {
    std::ostringstream os;
    os << "kernel " << spec.name() << " is defined on R^" << *d << " but the nodes live in R^"
       << condenser.dim();
    throw ConfigError(os.str());
  }
  if (spec.singular() && rule.mode == DiagonalMode::exact)
    throw ConfigError("singular kernel " + spec.name() +
                      " requires the effective_radius diagonal rule");
  if (!(rule.loading_cap >= 0.0)) throw ConfigError("loading cap must be nonnegative");
  if (rule.smoothing_neighbours < 0) throw ConfigError("smoothing_neighbours must be nonnegative");

  const Eigen::MatrixXd x = condenser.all_nodes();
  const Index n = x.cols();
  const Eigen::VectorXd h = diagonal_spacings(condenser, rule);

  KernelMatrix m;
  m.layout = condenser.layout();
  m.diagonal_rule = rule;
  m.regularized = spec.singular();
  m.entries.resize(n, n);
  for (Index k = 0; k < n; ++k) {
    m.entries(k, k) = spec.singular() ? spec.effective_self_energy(x.col(k), h(k))
                                      : spec(x.col(k), x.col(k));
    for (Index l = k + 1; l < n; ++l) {
      double v = spec(x.col(k), x.col(l));
      if (v == kInfinity) {
        // Coincident nodes of two equal-signed plates share a self-energy.
        v = spec.effective_self_energy(x.col(k), std::min(h(k), h(l)));
      }
      m.entries(k, l) = v;
      m.entries(l, k) = v;
    }
  }

  const double max_diag = n > 0 ? m.entries.diagonal().maxCoeff() : 0.0;
  if (n == 0) return m;
  const EigenEstimate lo = smallest_eigenvalue(m.entries);
  const double tolerance = 1e-10 * max_diag;
  if (lo.value < -tolerance) {
    const double needed = -lo.value;
    if (needed > rule.loading_cap * max_diag) {
      std::ostringstream os;
      os << "kernel matrix is indefinite: smallest eigenvalue " << lo.value
         << " needs loading " << needed << " above the cap " << rule.loading_cap * max_diag;
      throw NumericalError(os.str());
    }
    m.loading = needed;
    m.entries.diagonal().array() += needed;
  }
  m.min_eigenvalue_estimate = lo.value + m.loading;
  m.max_eigenvalue_estimate = largest_eigenvalue(m.entries).value;
  return m;
}

KernelMatrix KernelMatrix::restricted(const std::vector<std::vector<Index>>& subsets) const {
  if (subsets.size() != layout.plates())
    throw ContractError("restriction needs one subset per plate");
  std::vector<Index> flat;
  KernelMatrix out;
  out.diagonal_rule = diagonal_rule;
  out.loading = loading;
  out.regularized = regularized;
  Index offset = 0;
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    for (Index k : subsets[i]) {
      if (k < 0 || k >= layout.sizes[i]) throw ContractError("restriction index out of range");
      flat.push_back(layout.offsets[i] + k);
    }
    out.layout.sizes.push_back(static_cast<Index>(subsets[i].size()));
    out.layout.offsets.push_back(offset);
    out.layout.signs.push_back(layout.signs[i]);
    offset += static_cast<Index>(subsets[i].size());
  }
  const Index n = static_cast<Index>(flat.size());
  out.entries.resize(n, n);
  for (Index c = 0; c < n; ++c)
    for (Index r = 0; r < n; ++r)
      out.entries(r, c) = entries(flat[std::size_t(r)], flat[std::size_t(c)]);
  // Eigenvalues of a principal submatrix interlace those of the parent.
  out.min_eigenvalue_estimate = min_eigenvalue_estimate;
  out.max_eigenvalue_estimate = max_eigenvalue_estimate;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_shape(const KernelMatrix& matrix, const CondenserMeasure& mu) {
  if (mu.weights.size() != matrix.layout.plates())
    throw ContractError("measure and matrix have different plate counts");
  for (std::size_t i = 0; i < mu.weights.size(); ++i)
    if (mu.weights[i].size() != matrix.layout.sizes[i])
      throw ContractError("measure and matrix have different node counts");
}

Eigen::VectorXd signed_flat(const KernelMatrix& matrix, const CondenserMeasure& mu) {
  check_shape(matrix, mu);
  Eigen::VectorXd v(matrix.size());
  for (std::size_t i = 0; i < mu.weights.size(); ++i)
    v.segment(matrix.layout.offsets[i], matrix.layout.sizes[i]) =
        double(matrix.layout.signs[i]) * mu.weights[i];
  return v;
}

}  // namespace

double potential(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                 const Condenser& condenser, const CondenserMeasure& measure,
                 const KernelMatrix* matrix) {
  if (measure.weights.size() != condenser.size())
    throw ContractError("potential: measure does not match the condenser");
  double total = 0.0;
  for (std::size_t i = 0; i < condenser.size(); ++i) {
    const Plate& plate = condenser.plate(i);
    if (measure.weights[i].size() != plate.size())
      throw ContractError("potential: plate size mismatch");
    double plate_sum = 0.0;
    for (Index k = 0; k < plate.size(); ++k) {
      const double w = measure.weights[i](k);
      if (w == 0.0) continue;
      double kv = spec(x, plate.nodes.col(k));
      if (kv == kInfinity) {
        if (matrix == nullptr)
          throw NumericalError(
              "potential: evaluation point coincides with a node of a singular kernel and no "
              "diagonal rule was supplied");
        const Index flat = matrix->layout.offsets.at(i) + k;
        kv = matrix->entries(flat, flat);
      }
      plate_sum += w * kv;
    }
    total += plate.sign * plate_sum;
  }
  return total;
}

Eigen::VectorXd node_potentials(const KernelMatrix& matrix, const CondenserMeasure& measure) {
  return matrix.entries.selfadjointView<Eigen::Lower>() * signed_flat(matrix, measure);
}

double mutual_energy(const KernelMatrix& matrix, const CondenserMeasure& mu1,
                     const CondenserMeasure& mu2) {
  const Eigen::VectorXd v1 = signed_flat(matrix, mu1);
  const Eigen::VectorXd v2 = signed_flat(matrix, mu2);
  return v1.dot(matrix.entries * v2);
}

double energy(const KernelMatrix& matrix, const CondenserMeasure& mu) {
  return mutual_energy(matrix, mu, mu);
}

// ---------------------------------------------------------------------------

EigenEstimate largest_eigenvalue(const Eigen::MatrixXd& a, double rel_tol, int max_iter) {
  EigenEstimate est;
  const Index n = a.rows();
  if (n == 0) return est;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(double(n));
  // Break symmetry so the start vector is not orthogonal to the top mode.
  for (Index k = 0; k < n; ++k) v(k) += 1e-3 * std::sin(1.0 + double(k));
  v.normalize();
  double lambda = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd w = a * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    est.iterations = it;
    if (norm == 0.0) {
      lambda = 0.0;
      est.converged = true;
      break;
    }
    v = w / norm;
    if (it > 1 && std::abs(next - lambda) <= rel_tol * std::abs(next)) {
      lambda = next;
      est.converged = true;
      break;
    }
    lambda = next;
  }
  est.value = lambda;
  return est;
}

EigenEstimate smallest_eigenvalue(const Eigen::MatrixXd& a, double rel_tol, int max_iter) {
  EigenEstimate est;
  const Index n = a.rows();
  if (n == 0) return est;
  const int steps = static_cast<int>(std::min<Index>(n, max_iter));
  Eigen::MatrixXd basis(n, steps);
  std::vector<double> alpha, beta;
  Eigen::VectorXd q = Eigen::VectorXd::Ones(n);
  for (Index k = 0; k < n; ++k) q(k) += 0.5 * std::sin(3.0 * double(k) + 0.7);
  q.normalize();
  const double scale = std::max(1e-300, a.diagonal().cwiseAbs().maxCoeff());
  double previous = kInfinity;
  for (int j = 0; j < steps; ++j) {
    basis.col(j) = q;
    Eigen::VectorXd w = a * q;
    alpha.push_back(q.dot(w));
    // Full reorthogonalization, twice for stability.
    for (int pass = 0; pass < 2; ++pass)
      w -= basis.leftCols(j + 1) * (basis.leftCols(j + 1).transpose() * w);
    const double b = w.norm();

    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(j + 1, j + 1);
    for (int i = 0; i <= j; ++i) {
      t(i, i) = alpha[std::size_t(i)];
      if (i < j) t(i, i + 1) = t(i + 1, i) = beta[std::size_t(i)];
    }
    const double ritz = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(t, Eigen::EigenvaluesOnly)
                            .eigenvalues()
                            .minCoeff();
    est.value = ritz;
    est.iterations = j + 1;
    if (b <= 1e-14 * scale || j + 1 == n) {
      est.converged = true;  // invariant subspace found: Ritz values are exact
      break;
    }
    if (std::abs(ritz - previous) <= rel_tol * scale) {
      est.converged = true;
      break;
    }
    previous = ritz;
    beta.push_back(b);
    q = w / b;
  }
  return est;
}

}  // namespace condcap
