#include "condcap/solver.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <Eigen/Cholesky>

#include "condcap/error.hpp"

namespace condcap {

namespace {

// The objective w^T Q w with Q = S K S, S = diag(plate signs), in flat layout.
class SignedForm {
 public:
  SignedForm(const KernelMatrix& matrix) : k_(matrix.entries), layout_(matrix.layout) {
    signs_.resize(matrix.size());
    for (std::size_t i = 0; i < layout_.plates(); ++i)
      signs_.segment(layout_.offsets[i], layout_.sizes[i]).setConstant(layout_.signs[i]);
  }

  // Q v
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    Eigen::VectorXd sv = signs_.cwiseProduct(v);
    Eigen::VectorXd out = k_.selfadjointView<Eigen::Lower>() * sv;
    return signs_.cwiseProduct(out);
  }

  const Eigen::VectorXd& signs() const { return signs_; }
  const Eigen::MatrixXd& matrix() const { return k_; }
  const PlateLayout& layout() const { return layout_; }

 private:
  const Eigen::MatrixXd& k_;
  PlateLayout layout_;
  Eigen::VectorXd signs_;
};

void check_problem(const KernelMatrix& matrix, const Condenser& condenser,
                   const WeightSpec& weights) {
  if (matrix.layout.sizes != condenser.layout().sizes ||
      matrix.layout.signs != condenser.layout().signs)
    throw ContractError("kernel matrix was not assembled for this condenser");
  if (weights.g().size() != condenser.size())
    throw ContractError("weight spec does not match the condenser");
  for (std::size_t i = 0; i < condenser.size(); ++i)
    if (weights.g(i).size() != condenser.plate(i).size())
      throw ContractError("g table does not match plate node count");
}

Eigen::VectorXd project(const Eigen::VectorXd& y, const WeightSpec& weights,
                        const PlateLayout& layout) {
  Eigen::VectorXd out(y.size());
  for (std::size_t i = 0; i < layout.plates(); ++i)
    out.segment(layout.offsets[i], layout.sizes[i]) = project_weighted_simplex(
        y.segment(layout.offsets[i], layout.sizes[i]), weights.g(i), weights.a(i));
  return out;
}

// 2 (f - min over feasible nu of <nu, Qw>): the optimality residual at the worst
// probe. The minimum over plate i's simplex sits at a vertex a_i e_k / g_k.
double worst_gap(double f, const Eigen::VectorXd& qw, const WeightSpec& weights,
                 const PlateLayout& layout) {
  double lower = 0.0;
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    const auto seg = qw.segment(layout.offsets[i], layout.sizes[i]);
    lower += weights.a(i) * seg.cwiseQuotient(weights.g(i)).minCoeff();
  }
  return 2.0 * (f - lower);
}

// Probe gap via ||nu - l||^2 - ||nu||^2 + ||l||^2 = 2 (||l||^2 - <nu, Q l>).
double probe_gap(double f, const Eigen::VectorXd& qw, const WeightSpec& weights,
                 const PlateLayout& layout, int trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = -kInfinity;
  for (int t = 0; t < trials; ++t) {
    const Eigen::VectorXd nu = random_feasible_measure(weights, rng).flat();
    worst = std::max(worst, 2.0 * (f - nu.dot(qw)));
  }
  (void)layout;
  return trials > 0 ? worst : 0.0;
}

// Solves the equality-constrained problem on the current support exactly:
// Q_SS w = G^T z, G w = a. Nodes that come out negative leave the support
// and the solve is repeated a few times. Replaces (x, qx, f) only when the
// result is feasible and no worse.
bool polish_on_support(const SignedForm& form, const WeightSpec& weights, Eigen::VectorXd& x,
                       Eigen::VectorXd& qx, double& f) {
  const PlateLayout& layout = form.layout();
  std::vector<Index> support;
  std::vector<std::size_t> plate_of;
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    const auto seg = x.segment(layout.offsets[i], layout.sizes[i]);
    const double cut = 1e-9 * seg.maxCoeff();
    for (Index k = 0; k < seg.size(); ++k)
      if (seg(k) > cut) {
        support.push_back(layout.offsets[i] + k);
        plate_of.push_back(i);
      }
  }
  const Eigen::MatrixXd& kmat = form.matrix();
  const Eigen::VectorXd& signs = form.signs();
  for (int round = 0; round < 4; ++round) {
    const Index m = static_cast<Index>(support.size());
    if (m == 0) return false;
    Eigen::MatrixXd q(m, m);
    for (Index c = 0; c < m; ++c)
      for (Index r = c; r < m; ++r)
        q(r, c) = signs(support[r]) * signs(support[c]) *
                  kmat(std::max(support[r], support[c]), std::min(support[r], support[c]));
    Eigen::LLT<Eigen::MatrixXd> llt(q);
    if (llt.info() != Eigen::Success) return false;
    const Index p = static_cast<Index>(layout.plates());
    Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(m, p);
    for (Index r = 0; r < m; ++r) {
      const std::size_t i = plate_of[r];
      gt(r, Index(i)) = weights.g(i)(support[r] - layout.offsets[i]);
    }
    const Eigen::MatrixXd y = llt.solve(gt);
    const Eigen::MatrixXd schur = gt.transpose() * y;
    Eigen::VectorXd a(p);
    for (Index i = 0; i < p; ++i) a(i) = weights.a(std::size_t(i));
    const Eigen::VectorXd ws = y * schur.ldlt().solve(a);
    if (!ws.allFinite()) return false;
    if (ws.minCoeff() >= 0.0) {
      Eigen::VectorXd cand = Eigen::VectorXd::Zero(x.size());
      for (Index r = 0; r < m; ++r) cand(support[r]) = ws(r);
      cand = project(cand, weights, layout);  // cleans rounding in the constraints
      Eigen::VectorXd qc = form.apply(cand);
      const double fc = cand.dot(qc);
      if (!(fc <= f)) return false;
      x = std::move(cand);
      qx = std::move(qc);
      f = fc;
      return true;
    }
    std::vector<Index> kept;
    std::vector<std::size_t> kept_plate;
    for (Index r = 0; r < m; ++r)
      if (ws(r) > 0.0) {
        kept.push_back(support[r]);
        kept_plate.push_back(plate_of[r]);
      }
    support = std::move(kept);
    plate_of = std::move(kept_plate);
  }
  return false;
}

Eigen::VectorXd initial_point(const WeightSpec& weights, const PlateLayout& layout,
                              const SolverOptions& options) {
  if (options.random_start) {
    Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
    return random_feasible_measure(weights, rng).flat();
  }
  Eigen::VectorXd w(layout.total());
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    const double n = double(layout.sizes[i]);
    const double g_mean = weights.g(i).mean();
    w.segment(layout.offsets[i], layout.sizes[i]).setConstant(weights.a(i) / (n * g_mean));
  }
  return w;
}

void fill_derived(SolveReport& report, const Eigen::VectorXd& w, const Eigen::VectorXd& qw,
                  const SignedForm& form) {
  const PlateLayout& layout = form.layout();
  report.minimizer = CondenserMeasure::from_flat(w, layout);
  report.potentials = form.signs().cwiseProduct(qw);  // K S w
  report.eta.assign(layout.plates(), 0.0);
  report.constants.assign(layout.plates(), 0.0);
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    report.eta[i] = w.segment(layout.offsets[i], layout.sizes[i])
                        .dot(report.potentials.segment(layout.offsets[i], layout.sizes[i]));
    report.constants[i] = layout.signs[i] * report.capacity * report.eta[i];
  }
}

}  // namespace

CondenserMeasure random_feasible_measure(const WeightSpec& weights, Rng& rng) {
  CondenserMeasure m;
  for (std::size_t i = 0; i < weights.g().size(); ++i) {
    const Eigen::VectorXd t = random_simplex_point(rng, weights.g(i).size());
    m.weights.push_back(weights.a(i) * t.cwiseQuotient(weights.g(i)));
  }
  return m;
}

SolveReport solve_min_energy(const KernelMatrix& matrix, const Condenser& condenser,
                             const WeightSpec& weights, const SolverOptions& options) {
  check_problem(matrix, condenser, weights);
  if (!(options.tol > 0.0)) throw ConfigError("solver tol must be positive");
  if (options.max_iter < 1) throw ConfigError("solver max_iter must be at least 1");

  const SignedForm form(matrix);
  const PlateLayout& layout = form.layout();

  double lipschitz = 2.0 * matrix.max_eigenvalue_estimate * 1.02;
  if (!(lipschitz > 0.0)) lipschitz = 2.0 * largest_eigenvalue(matrix.entries).value * 1.02;
  if (!(lipschitz > 0.0)) throw NumericalError("kernel matrix has no positive eigenvalue");

  SolveReport report;
  Eigen::VectorXd x = project(initial_point(weights, layout, options), weights, layout);
  Eigen::VectorXd qx = form.apply(x);
  double f = x.dot(qx);
  Eigen::VectorXd y = x, qy = qx;
  double t = 1.0;
  report.energy_trace.push_back(f);
  bool momentum = false;  // y != x
  int last_polish = 0;
  const double polish_trigger = std::max(options.tol, 1e-6);

  for (int it = 1; it <= options.max_iter; ++it) {
    report.iterations = it;
    Eigen::VectorXd x_new = project(y - (2.0 / lipschitz) * qy, weights, layout);
    Eigen::VectorXd qx_new = form.apply(x_new);
    const double f_new = x_new.dot(qx_new);

    // Increases at the level of rounding are not overshoots.
    if (f_new > f + 1e-14 * std::abs(f)) {
      // Momentum overshoot: restart from the last accepted iterate. A plain
      // projected-gradient step cannot increase f unless the step is too long.
      if (!momentum) lipschitz *= 2.0;
      t = 1.0;
      y = x;
      qy = qx;
      momentum = false;
      continue;
    }
    report.relative_decrease = std::max(0.0, (f - f_new) / std::abs(f_new));
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_next;
    y = x_new + beta * (x_new - x);
    qy = qx_new + beta * (qx_new - qx);
    x = std::move(x_new);
    qx = std::move(qx_new);
    f = f_new;
    t = t_next;
    momentum = beta != 0.0;
    report.energy_trace.push_back(f);

    if (report.relative_decrease < polish_trigger && it - last_polish >= 50) {
      last_polish = it;
      if (polish_on_support(form, weights, x, qx, f)) {
        y = x;
        qy = qx;
        t = 1.0;
        momentum = false;
        report.energy_trace.push_back(f);
        if (worst_gap(f, qx, weights, layout) <= options.tol * std::abs(f)) {
          report.converged = true;
          break;
        }
      }
    }

    if (report.relative_decrease < options.tol) {
      const double gap = worst_gap(f, qx, weights, layout);
      if (gap <= options.tol * std::abs(f)) {
        report.converged = true;
        break;
      }
    }
  }

  if (!(f > 0.0)) {
    std::ostringstream os;
    os << "minimum energy " << f << " is not positive; the kernel matrix is not positive definite";
    throw NumericalError(os.str());
  }
  report.min_energy = f;
  report.capacity = 1.0 / f;
  fill_derived(report, x, qx, form);
  report.worst_case_gap = worst_gap(f, qx, weights, layout);
  report.certificate_gap = probe_gap(f, qx, weights, layout, options.certify_trials, options.seed);
  return report;
}

MinimizerCertificate certify_minimizer(const KernelMatrix& matrix, const Condenser& condenser,
                                       const WeightSpec& weights,
                                       const CondenserMeasure& candidate, int trials,
                                       std::uint64_t seed) {
  check_problem(matrix, condenser, weights);
  if (!is_feasible(candidate, weights, 1e-9))
    throw ContractError("certify_minimizer: candidate is not in the feasible class");
  const SignedForm form(matrix);
  const PlateLayout& layout = form.layout();
  const Eigen::VectorXd w = candidate.flat();
  const Eigen::VectorXd qw = form.apply(w);
  const double f = w.dot(qw);

  MinimizerCertificate cert;
  cert.gap = probe_gap(f, qw, weights, layout, trials, seed);
  cert.worst_case_gap = worst_gap(f, qw, weights, layout);
  const Eigen::VectorXd pot = form.signs().cwiseProduct(qw);
  for (std::size_t i = 0; i < layout.plates(); ++i) {
    const auto wi = w.segment(layout.offsets[i], layout.sizes[i]);
    const auto pi = pot.segment(layout.offsets[i], layout.sizes[i]);
    const double eta = wi.dot(pi);
    const double alpha = layout.signs[i];
    const double a = weights.a(i);
    const Eigen::VectorXd& g = weights.g(i);
    const double scale = std::max(std::abs(eta), std::abs(f));
    double residual = 0.0, violation = -kInfinity;
    for (Index k = 0; k < wi.size(); ++k) {
      if (wi(k) > kSupportThreshold) residual = std::max(residual, std::abs(a * pi(k) - eta * g(k)));
      violation = std::max(violation, alpha * eta * g(k) - alpha * a * pi(k));
    }
    cert.eta.push_back(eta);
    cert.equilibrium_residual.push_back(residual / scale);
    cert.inequality_violation.push_back(violation / scale);
  }
  return cert;
}

// ---------------------------------------------------------------------------

ExhaustionSchedule prefix_schedule(const Condenser& full,
                                   const std::vector<std::vector<Index>>& counts) {
  ExhaustionSchedule schedule;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    if (counts[s].size() != full.size()) {
      std::ostringstream os;
      os << "exhaustion stage " << s << " lists " << counts[s].size() << " plate counts, expected "
         << full.size();
      throw ConfigError(os.str());
    }
    std::vector<Plate> plates;
    for (std::size_t i = 0; i < full.size(); ++i) {
      const Index n = counts[s][i];
      if (n < 1 || n > full.plate(i).size()) {
        std::ostringstream os;
        os << "exhaustion stage " << s << " asks for " << n << " nodes of plate " << i
           << " which has " << full.plate(i).size();
        throw ConfigError(os.str());
      }
      Plate p = full.plate(i);
      p.nodes = full.plate(i).nodes.leftCols(n);
      p.generator = PointList{p.nodes};
      plates.push_back(std::move(p));
    }
    schedule.stages.emplace_back(std::move(plates));
  }
  return schedule;
}

Condenser farthest_point_reordered(const Condenser& condenser) {
  std::vector<Plate> plates;
  for (const Plate& p : condenser.plates()) {
    const std::vector<Index> order = farthest_point_order(p.nodes);
    Plate q = p;
    for (std::size_t k = 0; k < order.size(); ++k) q.nodes.col(Index(k)) = p.nodes.col(order[k]);
    plates.push_back(std::move(q));
  }
  return Condenser(std::move(plates));
}

std::vector<std::vector<std::vector<Index>>> nesting_maps(const ExhaustionSchedule& schedule) {
  if (schedule.stages.empty()) throw ContractError("exhaustion schedule has no stages");
  const Condenser& last = schedule.stages.back();
  using Key = std::vector<double>;
  auto key_of = [](const Eigen::MatrixXd& nodes, Index k) {
    return Key(nodes.col(k).data(), nodes.col(k).data() + nodes.rows());
  };
  std::vector<std::map<Key, Index>> lookup(last.size());
  for (std::size_t i = 0; i < last.size(); ++i)
    for (Index k = 0; k < last.plate(i).size(); ++k) lookup[i][key_of(last.plate(i).nodes, k)] = k;

  std::vector<std::vector<std::vector<Index>>> maps(schedule.stages.size());
  for (std::size_t s = 0; s < schedule.stages.size(); ++s) {
    const Condenser& stage = schedule.stages[s];
    if (stage.size() != last.size() || stage.layout().signs != last.layout().signs) {
      std::ostringstream os;
      os << "exhaustion schedule not nested: stage " << s << " has a different plate structure";
      throw ContractError(os.str());
    }
    maps[s].resize(stage.size());
    for (std::size_t i = 0; i < stage.size(); ++i)
      for (Index k = 0; k < stage.plate(i).size(); ++k) {
        auto it = lookup[i].find(key_of(stage.plate(i).nodes, k));
        if (it == lookup[i].end()) {
          std::ostringstream os;
          os << "exhaustion schedule not nested: stage " << s << " plate " << i << " node " << k
             << " is missing from the final stage " << schedule.stages.size() - 1;
          throw ContractError(os.str());
        }
        maps[s][i].push_back(it->second);
      }
  }
  for (std::size_t s = 0; s + 1 < maps.size(); ++s)
    for (std::size_t i = 0; i < maps[s].size(); ++i) {
      std::vector<Index> next = maps[s + 1][i];
      std::sort(next.begin(), next.end());
      for (Index k : maps[s][i])
        if (!std::binary_search(next.begin(), next.end(), k)) {
          std::ostringstream os;
          os << "exhaustion schedule not nested: stage " << s << " -> stage " << s + 1
             << ", plate " << i << " loses a node";
          throw ContractError(os.str());
        }
    }
  return maps;
}

ExhaustionResult exhaust(const KernelSpec& kernel, const DiagonalRule& rule,
                         const ExhaustionSchedule& schedule, const WeightSpec& weights,
                         const SolverOptions& options) {
  const auto maps = nesting_maps(schedule);
  const Condenser& last = schedule.stages.back();
  const KernelMatrix full = assemble_matrix(kernel, last, rule);
  ExhaustionResult result;
  for (std::size_t s = 0; s < schedule.stages.size(); ++s) {
    const KernelMatrix sub = full.restricted(maps[s]);
    const WeightSpec w = weights.restricted(maps[s]);
    result.reports.push_back(solve_min_energy(sub, schedule.stages[s], w, options));
    result.capacities.push_back(result.reports.back().capacity);
  }
  result.nondecreasing = true;
  for (std::size_t s = 0; s + 1 < result.capacities.size(); ++s)
    if (result.capacities[s + 1] < result.capacities[s] - kMonotonicityTolerance)
      result.nondecreasing = false;
  return result;
}

// ---------------------------------------------------------------------------

HomogeneityCheck scaled_problem_check(const SolveReport& report, const KernelMatrix& matrix,
                                      const Condenser& condenser, const WeightSpec& weights,
                                      const SolverOptions& options) {
  if (!(report.capacity > 0.0) || !std::isfinite(report.capacity))
    throw ContractError("homogeneity check needs a finite positive capacity");
  HomogeneityCheck check;
  check.rescaled = solve_min_energy(matrix, condenser, weights.scaled(report.capacity), options);
  check.residual = std::abs(check.rescaled.min_energy - report.capacity) / report.capacity;
  const Eigen::VectorXd expected = report.capacity * report.minimizer.flat();
  const Eigen::VectorXd got = check.rescaled.minimizer.flat();
  check.minimizer_deviation = (got - expected).cwiseAbs().maxCoeff() / expected.cwiseAbs().maxCoeff();
  return check;
}

SeededComparison compare_seeded_runs(const KernelMatrix& matrix, const Condenser& condenser,
                                     const WeightSpec& weights, const SolverOptions& options,
                                     std::uint64_t seed_a, std::uint64_t seed_b) {
  SeededComparison cmp;
  SolverOptions oa = options, ob = options;
  oa.random_start = ob.random_start = true;
  oa.seed = seed_a;
  ob.seed = seed_b;
  cmp.first = solve_min_energy(matrix, condenser, weights, oa);
  cmp.second = solve_min_energy(matrix, condenser, weights, ob);
  const Eigen::VectorXd w1 = cmp.first.minimizer.flat(), w2 = cmp.second.minimizer.flat();
  cmp.weight_distance = (w1 - w2).cwiseAbs().maxCoeff();
  const CondenserMeasure diff = CondenserMeasure::from_flat(w1 - w2, matrix.layout);
  cmp.seminorm_distance_sq = energy(matrix, diff);
  const double e1 = cmp.first.min_energy, e2 = cmp.second.min_energy;
  cmp.energy_difference = std::abs(e1 - e2);
  cmp.proximity_bound_holds =
      cmp.seminorm_distance_sq <= 2.0 * (e1 + e2) - 4.0 * std::min(e1, e2) + 1e-8;
  cmp.nonunique =
      cmp.weight_distance > 1e-4 && cmp.energy_difference <= options.tol * std::max(e1, e2);
  return cmp;
}

// ---------------------------------------------------------------------------

EscapeReport mass_escape_experiment(const KernelSpec& kernel, const DiagonalRule& rule,
                                    const ExhaustionSchedule& schedule, const WeightSpec& weights,
                                    double reference_radius, const Eigen::Vector3d& center,
                                    const SolverOptions& options) {
  if (!(reference_radius > 0.0)) throw ConfigError("escape reference radius must be positive");
  const ExhaustionResult ex = exhaust(kernel, rule, schedule, weights, options);
  const auto maps = nesting_maps(schedule);
  EscapeReport report;
  report.reference_radius = reference_radius;
  for (std::size_t s = 0; s < schedule.stages.size(); ++s) {
    const Condenser& stage = schedule.stages[s];
    if (stage.dim() != 3) throw ConfigError("mass escape experiment needs nodes in R^3");
    const SolveReport& r = ex.reports[s];
    const WeightSpec w = weights.restricted(maps[s]);
    EscapeStage st;
    st.capacity = r.capacity;
    st.constants = r.constants;
    st.converged = r.converged;
    for (std::size_t i = 0; i < stage.size(); ++i) {
      const Eigen::MatrixXd& x = stage.plate(i).nodes;
      double beyond = 0.0;
      for (Index k = 0; k < x.cols(); ++k) {
        const double radius = (x.col(k) - center).norm();
        st.max_radius = std::max(st.max_radius, radius);
        if (radius > reference_radius) beyond += w.g(i)(k) * r.minimizer.weights[i](k);
      }
      st.beyond_fraction.push_back(beyond / w.a(i));
    }
    report.stages.push_back(std::move(st));
  }
  const std::size_t plates = schedule.stages.back().size();
  report.drift_nondecreasing.assign(plates, true);
  for (std::size_t s = 0; s + 1 < report.stages.size(); ++s)
    for (std::size_t i = 0; i < plates; ++i)
      if (report.stages[s + 1].beyond_fraction[i] < report.stages[s].beyond_fraction[i])
        report.drift_nondecreasing[i] = false;
  report.reports = ex.reports;
  return report;
}

}  // namespace condcap
