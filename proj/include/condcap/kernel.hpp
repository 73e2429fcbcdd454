#pragma once

#include <limits>
#include <optional>
#include <string>
#include <variant>

#include <Eigen/Core>

#include "condcap/condenser.hpp"

namespace condcap {

/// |x - y|^(alpha - dim), 0 < alpha < dim.
struct RieszKernel {
  double alpha = 1.0;
  int dim = 3;
};

/// |x - y|^(2 - dim), dim >= 3. The Riesz kernel with alpha = 2.
struct NewtonKernel {
  int dim = 3;
};

/// exp(-|x - y|^2 / width^2). Bounded and strictly positive definite.
struct GaussianKernel {
  double width = 1.0;
};

/// Green function of the Laplacian for the ball B(0, radius) in R^dim,
/// image-charge form. Points must lie strictly inside the ball.
struct GreenBallKernel {
  double radius = 1.0;
  int dim = 3;
};

using KernelFamily = std::variant<RieszKernel, NewtonKernel, GaussianKernel, GreenBallKernel>;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

class KernelSpec {
 public:
  /// Throws ConfigError on invalid parameters.
  explicit KernelSpec(KernelFamily family);

  static KernelSpec riesz(double alpha, int dim) { return KernelSpec(RieszKernel{alpha, dim}); }
  static KernelSpec newton(int dim) { return KernelSpec(NewtonKernel{dim}); }
  static KernelSpec gaussian(double width) { return KernelSpec(GaussianKernel{width}); }
  static KernelSpec green_ball(double radius, int dim) {
    return KernelSpec(GreenBallKernel{radius, dim});
  }

  const KernelFamily& family() const { return family_; }
  std::string name() const;

  /// Infinite on the diagonal (Riesz, Newton, Green).
  bool singular() const;

  /// Ambient dimension the kernel is defined for; nullopt when any works.
  std::optional<int> dim() const;

  /// kappa(x, y); kInfinity when x == y and the kernel is singular.
  /// Throws GeometryError for Green-kernel points outside the open ball.
  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x,
                    const Eigen::Ref<const Eigen::VectorXd>& y) const;

  /// Regularized self-interaction of a node at x whose nearest neighbour is
  /// at distance h: the kernel evaluated at separation h / 2.
  double effective_self_energy(const Eigen::Ref<const Eigen::VectorXd>& x, double h) const;

 private:
  double riesz_power(double r, double exponent) const;

  KernelFamily family_;
};

/// Free-function form of KernelSpec::operator().
double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y);

enum class DiagonalMode { exact, effective_radius };

struct DiagonalRule {
  DiagonalMode mode = DiagonalMode::effective_radius;
  /// Loading cap relative to the largest diagonal entry.
  double loading_cap = 1e-6;
  /// The spacing h of a node is its nearest-neighbour distance averaged with
  /// those of its m nearest same-plate neighbours. 0 uses the raw distance.
  /// Averaging removes lattice jitter that the raw distance feeds straight
  /// into the weights.
  int smoothing_neighbours = 12;
};

/// Dense node-pair kernel matrix over a condenser, plates concatenated.
struct KernelMatrix {
  Eigen::MatrixXd entries;
  PlateLayout layout;
  DiagonalRule diagonal_rule;
  double loading = 0.0;
  double min_eigenvalue_estimate = 0.0;
  double max_eigenvalue_estimate = 0.0;
  bool regularized = false;  // singular kernel with effective-radius diagonal

  Index size() const { return entries.rows(); }

  /// Principal submatrix on the given per-plate node subsets.
  KernelMatrix restricted(const std::vector<std::vector<Index>>& subsets) const;
};

/// Builds the matrix: exact off-diagonals, diagonal per the rule, then
/// diagonal loading until the smallest eigenvalue estimate is nonnegative.
/// Throws GeometryError on duplicate nodes, ConfigError when a singular
/// kernel is paired with the exact diagonal, NumericalError when the
/// required loading exceeds the cap.
KernelMatrix assemble_matrix(const KernelSpec& spec, const Condenser& condenser,
                             const DiagonalRule& rule = {});

/// Nearest-neighbour distance of every node within its own plate (falls back
/// to the whole condenser for single-node plates).
Eigen::VectorXd nearest_neighbour_distances(const Condenser& condenser);

/// Spacing used for the effective-radius diagonal, per node in flat order.
Eigen::VectorXd diagonal_spacings(const Condenser& condenser, const DiagonalRule& rule);

/// Signed potential sum_i alpha_i sum_k w^i_k kappa(x, x^i_k). When x hits a
/// node and the kernel is singular, the matrix diagonal for that node is
/// used; without a matrix that case throws NumericalError.
double potential(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                 const Condenser& condenser, const CondenserMeasure& measure,
                 const KernelMatrix* matrix = nullptr);

/// Signed potentials at every node, i.e. K S w (S = plate signs).
Eigen::VectorXd node_potentials(const KernelMatrix& matrix, const CondenserMeasure& measure);

/// Signed mutual energy kappa(R mu1, R mu2) = (S w1)^T K (S w2).
double mutual_energy(const KernelMatrix& matrix, const CondenserMeasure& mu1,
                     const CondenserMeasure& mu2);

/// kappa(R mu, R mu).
double energy(const KernelMatrix& matrix, const CondenserMeasure& mu);

struct EigenEstimate {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
EigenEstimate largest_eigenvalue(const Eigen::MatrixXd& a, double rel_tol = 1e-8,
                                 int max_iter = 200);

/// Smallest eigenvalue of a symmetric matrix by Lanczos with full
/// reorthogonalization.
EigenEstimate smallest_eigenvalue(const Eigen::MatrixXd& a, double rel_tol = 1e-8,
                                  int max_iter = 200);

}  // namespace condcap
