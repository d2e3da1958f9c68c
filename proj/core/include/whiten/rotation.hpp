#pragma once

#include "whiten/layers.hpp"
#include "whiten/linalg.hpp"

namespace whiten {

struct RotationGrads {
  Matrix grad_y;
  Vector grad_gamma;  // empty when the stage has no scale
  Vector grad_bias;
  Matrix grad_skew;   // exactly skew-symmetric
};

/// Z = Gamma * cayley(S) * Y + b 1^T. gamma/bias may be empty (Gamma = I,
/// b = 0). Throws NumericError if skew is not exactly skew-symmetric.
Matrix rotate_forward(const Matrix& y, const Vector& gamma, const Vector& bias,
                      const Matrix& skew, RotationCache& cache);

RotationGrads rotate_backward(const RotationCache& cache, const Matrix& grad_z);

}  // namespace whiten
