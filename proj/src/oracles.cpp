#include "condcap/oracles.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/LU>

#include "condcap/error.hpp"

namespace condcap {

namespace {

void require_dim3(int dim) {
  if (dim != 3) throw ContractError("closed-form oracles are for the Newton kernel in R^3 only");
}

// Every t in (1/M) Z^n with t >= 0, sum t = 1, one per column.
Eigen::MatrixXd simplex_grid(Index n, long m) {
  std::vector<double> out;
  if (n == 1) return Eigen::MatrixXd::Ones(1, 1);
  const double inv = 1.0 / double(m);
  if (n == 2) {
    for (long i = 0; i <= m; ++i) {
      out.push_back(double(i) * inv);
      out.push_back(double(m - i) * inv);
    }
  } else {
    for (long i = 0; i <= m; ++i)
      for (long j = 0; j <= m - i; ++j) {
        out.push_back(double(i) * inv);
        out.push_back(double(j) * inv);
        out.push_back(double(m - i - j) * inv);
      }
  }
  return Eigen::Map<Eigen::MatrixXd>(out.data(), n, Index(out.size()) / n);
}

double grid_count(Index n, long m) {
  if (n == 1) return 1.0;
  if (n == 2) return double(m + 1);
  return double(m + 1) * double(m + 2) / 2.0;
}

// Exact minimizer of w^T Q w + 2 c^T w over {w >= 0, g.w = a}, for a handful
// of nodes, by solving the equality-constrained problem on every face. Each
// face solution is affine in c and is precomputed.
class FaceMinimizer {
 public:
  FaceMinimizer(const Eigen::MatrixXd& q, const Eigen::VectorXd& g, double a) : q_(q) {
    const Index n = q.rows();
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      std::vector<Index> idx;
      for (Index k = 0; k < n; ++k)
        if (mask & (1u << k)) idx.push_back(k);
      const Index f = Index(idx.size());
      // [2 Q_FF  g_F; g_F^T 0] [w; -mu] = [-2 c_F; a]
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(f + 1, f + 1);
      for (Index r = 0; r < f; ++r) {
        for (Index s = 0; s < f; ++s) kkt(r, s) = 2.0 * q(idx[r], idx[s]);
        kkt(r, f) = g(idx[r]);
        kkt(f, r) = g(idx[r]);
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
      if (!lu.isInvertible()) continue;
      const Eigen::MatrixXd inv = lu.inverse();
      Face face;
      face.idx = idx;
      face.slope = -2.0 * inv.topLeftCorner(f, f);
      face.offset = a * inv.topRightCorner(f, 1);
      faces_.push_back(std::move(face));
    }
  }

  // Returns min value of w^T Q w + 2 c^T w and writes the argmin.
  double minimize(const Eigen::VectorXd& c, Eigen::VectorXd& argmin) const {
    double best = kInfinity;
    Eigen::VectorXd w(q_.rows());
    for (const Face& face : faces_) {
      const Index f = Index(face.idx.size());
      Eigen::VectorXd cf(f);
      for (Index r = 0; r < f; ++r) cf(r) = c(face.idx[r]);
      const Eigen::VectorXd wf = face.slope * cf + face.offset;
      if (wf.minCoeff() < -1e-14) continue;
      w.setZero();
      for (Index r = 0; r < f; ++r) w(face.idx[r]) = std::max(0.0, wf(r));
      const double v = w.dot(q_ * w) + 2.0 * c.dot(w);
      if (v < best) {
        best = v;
        argmin = w;
      }
    }
    return best;
  }

 private:
  struct Face {
    std::vector<Index> idx;
    Eigen::MatrixXd slope;
    Eigen::VectorXd offset;
  };
  Eigen::MatrixXd q_;
  std::vector<Face> faces_;
};

}  // namespace

OracleResult sphere_capacitor_oracle(double r, double big_r, int dim) {
  require_dim3(dim);
  if (!(r > 0.0) || !(r < big_r)) {
    std::ostringstream os;
    os << "sphere_capacitor_oracle needs 0 < r < R, got r = " << r << ", R = " << big_r;
    throw ContractError(os.str());
  }
  OracleResult out;
  out.min_energy = 1.0 / r - 1.0 / big_r;
  out.capacity = r * big_r / (big_r - r);
  out.constants = {1.0, 0.0};
  std::ostringstream d;
  d << "uniform on sphere r=" << r << " (+) and sphere R=" << big_r << " (-), unit mass each";
  out.distribution_descriptor = d.str();
  out.provenance =
      "closed form cap = rR/(R-r): unit shell potential 1/max(|x|, rho) gives self-energies "
      "1/r, 1/R and mutual energy 1/R, so the minimum energy is 1/r - 1/R";
  return out;
}

OracleResult ball_capacity_oracle(double r, int dim) {
  require_dim3(dim);
  if (!(r > 0.0)) throw ContractError("ball_capacity_oracle needs r > 0");
  OracleResult out;
  out.capacity = r;
  out.min_energy = 1.0 / r;
  out.constants = {1.0};
  std::ostringstream d;
  d << "uniform on sphere r=" << r;
  out.distribution_descriptor = d.str();
  out.provenance = "closed form cap = r: unit shell self-energy 1/r, equilibrium on the boundary";
  return out;
}

OracleResult grid_search_oracle(const KernelMatrix& matrix, const Condenser& condenser,
                                const WeightSpec& weights, double resolution) {
  const PlateLayout& layout = condenser.layout();
  if (layout.plates() < 1 || layout.plates() > 2)
    throw ContractError("grid_search_oracle handles one or two plates");
  for (Index s : layout.sizes)
    if (s > 3) throw ContractError("grid_search_oracle handles at most 3 nodes per plate");
  if (!(resolution > 0.0) || resolution > 1e-2)
    throw ContractError("grid_search_oracle needs 0 < resolution <= 1e-2");
  if (matrix.layout.sizes != layout.sizes)
    throw ContractError("grid_search_oracle: matrix was not assembled for this condenser");
  const long m = std::lround(1.0 / resolution);

  Eigen::VectorXd signs(layout.total());
  for (std::size_t i = 0; i < layout.plates(); ++i)
    signs.segment(layout.offsets[i], layout.sizes[i]).setConstant(layout.signs[i]);
  const Eigen::MatrixXd q = signs.asDiagonal() * matrix.entries * signs.asDiagonal();

  // Grid of actual weights w = a t / g, per plate.
  std::vector<Eigen::MatrixXd> grids;
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    Eigen::MatrixXd t = simplex_grid(layout.sizes[i], m);
    const Eigen::VectorXd scale = weights.a(i) * weights.g(i).cwiseInverse();
    grids.push_back(scale.asDiagonal() * t);
  }

  auto block = [&](std::size_t i, std::size_t j) {
    return q.block(layout.offsets[i], layout.offsets[j], layout.sizes[i], layout.sizes[j]);
  };

  OracleResult out;
  std::ostringstream prov;
  double best = kInfinity;
  Eigen::VectorXd best_w(layout.total());

  const Eigen::MatrixXd g0 = grids[0];
  const Eigen::MatrixXd q00 = block(0, 0);
  Eigen::VectorXd e0(g0.cols());
  for (Index c = 0; c < g0.cols(); ++c) e0(c) = g0.col(c).dot(q00 * g0.col(c));

  if (layout.plates() == 1) {
    Index arg;
    best = e0.minCoeff(&arg);
    best_w = g0.col(arg);
    prov << "exhaustive search over " << g0.cols() << " grid points";
  } else {
    const Eigen::MatrixXd q01 = block(0, 1);
    const Eigen::MatrixXd q11 = block(1, 1);
    const double product = grid_count(layout.sizes[0], m) * grid_count(layout.sizes[1], m);
    if (product <= kGridBudget) {
      const Eigen::MatrixXd& g1 = grids[1];
      Eigen::VectorXd e1(g1.cols());
      for (Index c = 0; c < g1.cols(); ++c) e1(c) = g1.col(c).dot(q11 * g1.col(c));
      for (Index c0 = 0; c0 < g0.cols(); ++c0) {
        const Eigen::RowVectorXd cross = 2.0 * (q01.transpose() * g0.col(c0)).transpose() * g1;
        Index c1;
        const double v = e0(c0) + (e1.transpose() + cross).minCoeff(&c1);
        if (v < best) {
          best = v;
          best_w << g0.col(c0), g1.col(c1);
        }
      }
      prov << "exhaustive search over " << g0.cols() << " x " << g1.cols() << " grid points";
    } else {
      const FaceMinimizer inner(q11, weights.g(1), weights.a(1));
      Eigen::VectorXd w1;
      for (Index c0 = 0; c0 < g0.cols(); ++c0) {
        const double v = e0(c0) + inner.minimize(q01.transpose() * g0.col(c0), w1);
        if (v < best) {
          best = v;
          best_w << g0.col(c0), w1;
        }
      }
      prov << "search over " << g0.cols() << " grid points of plate 0, plate 1 minimized "
           << "exactly on every face of its simplex (product grid " << product
           << " points exceeds the budget)";
    }
  }
  prov << ", resolution " << 1.0 / double(m);

  if (!(best > 0.0)) throw NumericalError("grid_search_oracle: minimum energy is not positive");
  out.min_energy = best;
  out.capacity = 1.0 / best;
  out.argmin = CondenserMeasure::from_flat(best_w, layout);
  const Eigen::VectorXd qw = q * best_w;
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    const double eta_signed =
        best_w.segment(layout.offsets[i], layout.sizes[i])
            .dot(qw.segment(layout.offsets[i], layout.sizes[i]));  // alpha_i eta_i
    out.constants.push_back(out.capacity * eta_signed);
  }
  out.distribution_descriptor = "grid argmin";
  out.provenance = prov.str();
  return out;
}

}  // namespace condcap
