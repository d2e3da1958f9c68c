#include "whiten/rotation.hpp"

namespace whiten {

Matrix rotate_forward(const Matrix& y, const Vector& gamma, const Vector& bias,
                      const Matrix& skew, RotationCache& cache) {
  const Index n = y.rows();
  if (skew.rows() != n || skew.cols() != n) {
    throw DataError("rotate_forward: skew generator shape mismatch");
  }
  if ((skew + skew.transpose()).cwiseAbs().maxCoeff() != 0.0) {
    throw NumericError("rotate_forward: rotation generator is not "
                       "skew-symmetric (corrupted parameters)");
  }
  cache.s = skew;
  cache.w = cayley(skew);
  cache.y = y;
  cache.gamma = gamma;
  Matrix z = cache.w * y;
  if (gamma.size() > 0) z = gamma.asDiagonal() * z;
  if (bias.size() > 0) z.colwise() += bias;
  return z;
}

RotationGrads rotate_backward(const RotationCache& cache,
                              const Matrix& grad_z) {
  const Matrix& w = cache.w;
  const Matrix& s = cache.s;
  const Matrix& y = cache.y;
  const Index n = w.rows();

  RotationGrads out;
  if (cache.gamma.size() > 0) {
    out.grad_gamma = diag_of_product(w * y, grad_z);
    out.grad_bias = grad_z.rowwise().sum();
  }
  const Matrix gz = cache.gamma.size() > 0
                        ? Matrix(cache.gamma.asDiagonal() * grad_z)
                        : grad_z;
  out.grad_y = w.transpose() * gz;

  Matrix gw = gz * y.transpose();
  gw = 0.5 * (gw - w * gw.transpose() * w).eval();

  // (I + W^T) gW (I + S)^{-1}, the (I+S) inverse applied as a linear solve:
  // X (I+S) = R  =>  (I+S)^T X^T = R^T with (I+S)^T = I - S.
  Matrix rhs = gw + w.transpose() * gw;
  Eigen::PartialPivLU<Matrix> lu(Matrix::Identity(n, n) - s);
  Matrix gs = lu.solve(rhs.transpose()).transpose();
  out.grad_skew = 0.5 * (gs - gs.transpose()).eval();
  return out;
}

}  // namespace whiten
