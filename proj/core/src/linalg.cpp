#include "whiten/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace whiten {

SymMatrix SymMatrix::from_full(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw DataError("SymMatrix::from_full: matrix is not square");
  }
  SymMatrix s(m.rows());
  for (Index j = 0; j < m.cols(); ++j) {
    s.m_(j, j) = m(j, j);
    for (Index i = j + 1; i < m.rows(); ++i) {
      const double v = 0.5 * (m(i, j) + m(j, i));
      s.m_(i, j) = v;
      s.m_(j, i) = v;
    }
  }
  return s;
}

SymMatrix SymMatrix::from_lower(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw DataError("SymMatrix::from_lower: matrix is not square");
  }
  SymMatrix s(m.rows());
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = j; i < m.rows(); ++i) {
      s.m_(i, j) = m(i, j);
      s.m_(j, i) = m(i, j);
    }
  }
  return s;
}

SymMatrix SymMatrix::diagonal(const Vector& v) {
  SymMatrix s(v.size());
  s.m_.diagonal() = v;
  return s;
}

SymMatrix SymMatrix::identity(Index n) {
  SymMatrix s(n);
  s.m_.setIdentity();
  return s;
}

bool UnitLdl::any_clamped() const {
  return std::any_of(clamped.begin(), clamped.end(),
                     [](std::uint8_t c) { return c != 0; });
}

bool UnitLdl::identity_perm() const {
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] != static_cast<Index>(i)) return false;
  }
  return true;
}

EigPair sym_eig(const SymMatrix& m) {
  if (!all_finite(m.mat())) {
    throw NumericError("sym_eig: non-finite entries in input");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m.mat());
  if (solver.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "sym_eig: eigensolver failed to converge (n=" << m.n()
        << ", max|entry|=" << m.mat().cwiseAbs().maxCoeff()
        << ", trace=" << m.mat().trace() << ")";
    throw NumericError(msg.str());
  }

  const Index n = m.n();
  EigPair out;
  out.u.resize(n, n);
  out.lambda.resize(n);
  // Eigen returns ascending order; reorder descending, keeping the solver's
  // order within ties so diagonal input yields the identity basis.
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return solver.eigenvalues()[a] > solver.eigenvalues()[b];
  });
  for (Index k = 0; k < n; ++k) {
    out.lambda[k] = solver.eigenvalues()[order[k]];
    out.u.col(k) = solver.eigenvectors().col(order[k]);
  }
  // Sign convention: largest-magnitude component positive.
  for (Index k = 0; k < n; ++k) {
    Index imax = 0;
    out.u.col(k).cwiseAbs().maxCoeff(&imax);
    if (out.u(imax, k) < 0.0) out.u.col(k) = -out.u.col(k);
  }
  return out;
}

UnitLdl chol_unit_ldl(const SymMatrix& m) {
  const Index n = m.n();
  UnitLdl f;
  f.l = Matrix::Identity(n, n);
  f.d = Vector::Zero(n);
  f.perm.resize(n);
  std::iota(f.perm.begin(), f.perm.end(), Index{0});
  f.clamped.assign(n, 0);

  const Matrix& a = m.mat();
  for (Index j = 0; j < n; ++j) {
    double s = a(j, j);
    for (Index k = 0; k < j; ++k) s -= f.l(j, k) * f.l(j, k) * f.d[k];
    if (!(s > 0.0)) {
      std::ostringstream msg;
      msg << "chol_unit_ldl: matrix not positive definite, pivot " << j
          << " is " << s;
      throw NumericError(msg.str());
    }
    f.d[j] = s;
    for (Index i = j + 1; i < n; ++i) {
      double v = a(i, j);
      for (Index k = 0; k < j; ++k) v -= f.l(i, k) * f.d[k] * f.l(j, k);
      f.l(i, j) = v / s;
    }
  }
  return f;
}

UnitLdl pivoted_ldl(const SymMatrix& m, double eps) {
  const Index n = m.n();
  Matrix b = m.mat();
  UnitLdl f;
  f.l = Matrix::Identity(n, n);
  f.d = Vector::Zero(n);
  f.perm.resize(n);
  std::iota(f.perm.begin(), f.perm.end(), Index{0});
  f.clamped.assign(n, 0);

  const double scale = std::max(b.diagonal().cwiseAbs().maxCoeff(), 1.0);
  // slack for PSD-up-to-rounding inputs
  const double psd_tol =
      static_cast<double>(n) * std::numeric_limits<double>::epsilon() * scale;

  for (Index k = 0; k < n; ++k) {
    // largest remaining diagonal
    Index p = k;
    for (Index i = k + 1; i < n; ++i) {
      if (b(i, i) > b(p, p)) p = i;
    }
    if (p != k) {
      b.row(k).swap(b.row(p));
      b.col(k).swap(b.col(p));
      if (k > 0) f.l.row(k).head(k).swap(f.l.row(p).head(k));
      std::swap(f.perm[k], f.perm[p]);
    }
    const double piv = b(k, k);
    if (piv < -std::max(eps, psd_tol)) {
      std::ostringstream msg;
      msg << "pivoted_ldl: matrix not positive semi-definite, pivot " << k
          << " is " << piv;
      throw NumericError(msg.str());
    }
    f.d[k] = piv;
    if (piv > psd_tol) {
      for (Index i = k + 1; i < n; ++i) f.l(i, k) = b(i, k) / piv;
      for (Index j = k + 1; j < n; ++j) {
        for (Index i = j; i < n; ++i) {
          b(i, j) -= f.l(i, k) * piv * f.l(j, k);
          b(j, i) = b(i, j);
        }
      }
    }
    // piv <= psd_tol: remaining block of a PSD matrix is numerically zero in
    // this column; leave l(:,k) at e_k.
  }
  for (Index k = 0; k < n; ++k) {
    if (f.d[k] < eps) {
      f.d[k] = eps;
      f.clamped[k] = 1;
    }
  }
  return f;
}

Matrix tri_solve(const Matrix& unit_lower, const Matrix& b, Side side,
                 bool transposed) {
  const Matrix& l = unit_lower;
  if (l.rows() != l.cols()) {
    throw DataError("tri_solve: triangular factor is not square");
  }
  const Index n = l.rows();
  if ((side == Side::Left && b.rows() != n) ||
      (side == Side::Right && b.cols() != n)) {
    throw DataError("tri_solve: shape mismatch");
  }
  Matrix x = b;
  if (side == Side::Left) {
    if (transposed) {
      l.transpose().triangularView<Eigen::UnitUpper>().solveInPlace(x);
    } else {
      l.triangularView<Eigen::UnitLower>().solveInPlace(x);
    }
  } else {
    if (transposed) {
      l.transpose().triangularView<Eigen::UnitUpper>().solveInPlace<Eigen::OnTheRight>(x);
    } else {
      l.triangularView<Eigen::UnitLower>().solveInPlace<Eigen::OnTheRight>(x);
    }
  }
  return x;
}

Matrix build_f(const Vector& lambda, double k_max) {
  const Index n = lambda.size();
  Matrix f = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double den = lambda[j] - lambda[i];
      double v = 0.0;
      if (den != 0.0) {
        v = 1.0 / den;
        if (std::abs(v) > k_max) v = std::copysign(k_max, v);
      }
      f(i, j) = v;
      f(j, i) = -v;
    }
  }
  return f;
}

Matrix cayley(const Matrix& skew) {
  const Index n = skew.rows();
  if (skew.cols() != n) throw DataError("cayley: matrix is not square");
  const Matrix i_plus = Matrix::Identity(n, n) + skew;
  const Matrix i_minus = Matrix::Identity(n, n) - skew;
  // w (I-s) = (I+s)  =>  (I+s) w^T = (I-s), since (I-s)^T = I+s
  Eigen::PartialPivLU<Matrix> lu(i_plus);
  Matrix wt = lu.solve(i_minus);
  if (!all_finite(wt)) {
    throw NumericError("cayley: linear solve produced non-finite values");
  }
  return wt.transpose();
}

Vector diag_of_product(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DataError("diag_of_product: shape mismatch");
  }
  return a.cwiseProduct(b).rowwise().sum();
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace whiten
