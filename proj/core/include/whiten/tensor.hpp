#pragma once

#include <vector>

#include "whiten/linalg.hpp"

namespace whiten {

/// Dense (batch, channels, height, width) tensor of doubles, row-major with
/// width fastest.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(Index b, Index c, Index h, Index w)
      : b_(b), c_(c), h_(h), w_(w),
        data_(static_cast<std::size_t>(b * c * h * w), 0.0) {}

  double& at(Index b, Index c, Index y, Index x) {
    return data_[offset(b, c, y, x)];
  }
  double at(Index b, Index c, Index y, Index x) const {
    return data_[offset(b, c, y, x)];
  }

  Index batch() const { return b_; }
  Index channels() const { return c_; }
  Index height() const { return h_; }
  Index width() const { return w_; }
  Index size() const { return static_cast<Index>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool all_finite() const;
  void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  bool same_shape(const Tensor4& o) const {
    return b_ == o.b_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

 private:
  std::size_t offset(Index b, Index c, Index y, Index x) const {
    return static_cast<std::size_t>(((b * c_ + c) * h_ + y) * w_ + x);
  }

  Index b_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

}  // namespace whiten
