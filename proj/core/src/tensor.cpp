#include "whiten/tensor.hpp"

#include <cmath>

namespace whiten {

bool Tensor4::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace whiten
