#include "condcap/active_set_qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "condcap/error.hpp"

namespace condcap {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Quantities tied to the current working set J: with N = A(:, J),
// GN = G^-1 N and M = N^T G^-1 N.
struct WorkingSet {
  Eigen::MatrixXd gn;
  Eigen::LDLT<Eigen::MatrixXd> m;
  bool empty = true;
};

WorkingSet factor(const Eigen::MatrixXd& ginv, const Eigen::MatrixXd& a,
                  const std::vector<int>& active) {
  WorkingSet ws;
  if (active.empty()) return ws;
  Eigen::MatrixXd n(a.rows(), Eigen::Index(active.size()));
  for (std::size_t j = 0; j < active.size(); ++j) n.col(Eigen::Index(j)) = a.col(active[j]);
  ws.gn = ginv * n;
  ws.m.compute(n.transpose() * ws.gn);
  ws.empty = false;
  return ws;
}

}  // namespace

QpResult solve_qp(const QpProblem& p, const QpOptions& options, const Eigen::VectorXd* warm) {
  const Eigen::Index n = p.hessian.rows();
  const Eigen::Index m = p.constraints.cols();
  if (p.hessian.cols() != n || p.linear.size() != n || p.constraints.rows() != n ||
      p.bounds.size() != m)
    throw ContractError("qp: inconsistent problem dimensions");
  if (warm && warm->size() != n) throw ContractError("qp: warm start has the wrong size");

  Eigen::LLT<Eigen::MatrixXd> llt(p.hessian);
  if (llt.info() != Eigen::Success) throw ContractError("qp: hessian is not positive definite");
  const Eigen::MatrixXd ginv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::VectorXd x_free = -(ginv * p.linear);

  Eigen::VectorXd norms(m);
  for (Eigen::Index j = 0; j < m; ++j) norms(j) = p.constraints.col(j).lpNorm<Eigen::Infinity>();
  auto scale = [&](const Eigen::VectorXd& x, Eigen::Index j) {
    return 1.0 + std::abs(p.bounds(j)) + norms(j) * x.lpNorm<Eigen::Infinity>();
  };

  QpResult res;
  std::vector<int> active;
  std::vector<double> u;
  Eigen::VectorXd x = x_free;

  // Minimizer on the manifold {A_J^T x = b_J}; false when a multiplier is negative.
  auto equality_solve = [&](std::vector<int>& set, std::vector<double>& mult) {
    while (true) {
      if (set.empty()) {
        x = x_free;
        mult.clear();
        return;
      }
      const WorkingSet ws = factor(ginv, p.constraints, set);
      Eigen::VectorXd rhs(Eigen::Index(set.size()));
      for (std::size_t j = 0; j < set.size(); ++j) rhs(Eigen::Index(j)) = p.bounds(set[j]);
      const Eigen::VectorXd uu = ws.m.solve(rhs + ws.gn.transpose() * p.linear);
      Eigen::Index worst;
      if (uu.minCoeff(&worst) < 0.0) {
        set.erase(set.begin() + worst);
        continue;
      }
      x = x_free + ws.gn * uu;
      mult.assign(uu.data(), uu.data() + uu.size());
      return;
    }
  };

  if (warm) {
    res.warm_started = true;
    std::vector<int> band;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double s = p.constraints.col(j).dot(*warm) - p.bounds(j);
      if (std::abs(s) <= options.warm_band * scale(*warm, j)) band.push_back(int(j));
    }
    if (!band.empty()) {
      // Keep a linearly independent subset (in the G^-1 metric).
      Eigen::MatrixXd cols(n, Eigen::Index(band.size()));
      for (std::size_t j = 0; j < band.size(); ++j)
        cols.col(Eigen::Index(j)) = llt.matrixL().solve(p.constraints.col(band[j]));
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cols);
      qr.setThreshold(1e-10);
      const Eigen::Index rank = qr.rank();
      for (Eigen::Index j = 0; j < rank; ++j)
        active.push_back(band[std::size_t(qr.colsPermutation().indices()(j))]);
    }
    equality_solve(active, u);
  }

  while (true) {
    Eigen::Index add = -1;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (std::find(active.begin(), active.end(), int(j)) != active.end()) continue;
      const double sc = scale(x, j);
      const double s = (p.constraints.col(j).dot(x) - p.bounds(j)) / sc;
      if (s < -options.tol && s < worst) {
        worst = s;
        add = j;
      }
    }
    if (add < 0) break;

    const Eigen::VectorXd np = p.constraints.col(add);
    std::vector<double> uplus = u;
    double uadd = 0.0;
    while (true) {
      if (++res.iterations > options.max_iter) {
        std::ostringstream os;
        os << "qp: no optimum after " << options.max_iter << " active-set steps";
        throw NonconvergenceError(os.str());
      }
      const WorkingSet ws = factor(ginv, p.constraints, active);
      Eigen::VectorXd z = ginv * np;
      Eigen::VectorXd r;
      if (!ws.empty) {
        r = ws.m.solve(ws.gn.transpose() * np);
        z -= ws.gn * r;
      }
      double t1 = kInf;
      Eigen::Index drop = -1;
      for (Eigen::Index j = 0; j < r.size(); ++j)
        if (r(j) > 0.0 && uplus[std::size_t(j)] / r(j) < t1) {
          t1 = uplus[std::size_t(j)] / r(j);
          drop = j;
        }
      const double zn = z.dot(np);
      const double slack = np.dot(x) - p.bounds(add);
      const bool dependent = zn <= 1e-14 * np.dot(ginv * np);
      const double t2 = dependent ? kInf : -slack / zn;
      const double t = std::min(t1, t2);
      if (t == kInf) throw NumericalError("qp: the constraints are infeasible");

      for (Eigen::Index j = 0; j < r.size(); ++j) uplus[std::size_t(j)] -= t * r(j);
      uadd += t;
      if (!dependent) x += t * z;
      if (t2 <= t1) {
        active.push_back(int(add));
        uplus.push_back(uadd);
        u = std::move(uplus);
        ++res.additions;
        break;
      }
      active.erase(active.begin() + drop);
      uplus.erase(uplus.begin() + drop);
      ++res.drops;
    }
  }

  res.x = x;
  res.active = active;
  res.multipliers = Eigen::VectorXd::Zero(m);
  for (std::size_t j = 0; j < active.size(); ++j) res.multipliers(active[j]) = std::max(0.0, u[j]);
  res.objective = 0.5 * x.dot(p.hessian * x) + p.linear.dot(x);
  res.immediate = res.warm_started && res.additions == 0 && res.drops == 0;
  return res;
}

}  // namespace condcap
