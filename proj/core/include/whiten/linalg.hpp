#pragma once

#include <Eigen/Dense>
#include <vector>

#include "whiten/errors.hpp"

namespace whiten {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Dense real matrix that is exactly symmetric: entries (i,j) and (j,i) are
/// the same double, always. Construction symmetrizes explicitly; nothing in
/// the library ever assumes near-symmetry of a plain Matrix.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(Index n) : m_(Matrix::Zero(n, n)) {}

  /// Averages m with its transpose and mirrors, so the invariant holds
  /// bit-exactly even for inputs that are only symmetric up to rounding.
  static SymMatrix from_full(const Matrix& m);

  /// Mirrors the lower triangle of m (diagonal included).
  static SymMatrix from_lower(const Matrix& m);

  /// diag(v) as an exactly symmetric matrix.
  static SymMatrix diagonal(const Vector& v);

  static SymMatrix identity(Index n);

  const Matrix& mat() const { return m_; }
  Index n() const { return m_.rows(); }

 private:
  Matrix m_;
};

/// Eigendecomposition of a SymMatrix: u's columns are orthonormal
/// eigenvectors, lambda is sorted descending (lambda[0] is the maximum).
struct EigPair {
  Matrix u;
  Vector lambda;
};

/// Unit-diagonal LDL^T factorization, optionally with symmetric pivoting:
/// sigma(perm, perm) = l * diag(d) * l^T. perm is the identity for the
/// unpivoted route. clamped[i] marks pivots raised to the floor eps.
struct UnitLdl {
  Matrix l;
  Vector d;
  std::vector<Index> perm;
  std::vector<std::uint8_t> clamped;

  bool any_clamped() const;
  bool identity_perm() const;
};

/// Eigendecomposition with descending eigenvalues and a fixed sign
/// convention (the largest-magnitude component of each eigenvector is
/// positive), so repeated factorizations of the same matrix are bit-equal.
/// Throws NumericError if the iteration fails to converge.
EigPair sym_eig(const SymMatrix& m);

/// Unpivoted unit LDL^T of a positive definite matrix. Throws NumericError
/// carrying the failing pivot index when a non-positive pivot appears.
UnitLdl chol_unit_ldl(const SymMatrix& m);

/// Diagonal-pivoted (largest remaining diagonal, 1x1 pivots) LDL^T of a PSD
/// matrix. After factorization every pivot below eps is raised to eps and
/// flagged in the clamp mask. A pivot below -eps (beyond the rounding slack
/// for PSD input) throws NumericError.
UnitLdl pivoted_ldl(const SymMatrix& m, double eps);

enum class Side { Left, Right };

/// Solves l * x = b (Left) or x * l = b (Right) against the unit lower
/// triangle of l, or against its transpose when transposed is set. The
/// triangular factor is never inverted explicitly.
Matrix tri_solve(const Matrix& unit_lower, const Matrix& b, Side side,
                 bool transposed = false);

/// Eigen-gap reciprocal matrix f[i][j] = 1/(lambda[j] - lambda[i]) with the
/// stabilization rules applied: zero denominators give 0, magnitudes above
/// k_max are clamped to k_max*sign. Exactly antisymmetric, zero diagonal.
/// k_max = infinity disables the clamp.
Matrix build_f(const Vector& lambda, double k_max);

/// Cayley transform w = (I+s)(I-s)^{-1} of a skew-symmetric matrix, computed
/// by a linear solve. The result is orthonormal with det +1.
Matrix cayley(const Matrix& skew);

/// Row sums of the Hadamard product, i.e. diag(a b^T) without forming the
/// product matrix.
Vector diag_of_product(const Matrix& a, const Matrix& b);

/// True when every entry of m is finite.
bool all_finite(const Matrix& m);

}  // namespace whiten
