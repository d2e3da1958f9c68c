#include "whiten/nn.hpp"

#include <cmath>

#include "whiten/rng.hpp"

namespace whiten {

namespace {

constexpr Index kChunk = 32;  // batch rows per im2col buffer

Index conv_out(Index in, Index fov, Index stride) {
  return (in - fov) / stride + 1;
}

}  // namespace

Conv2d::Conv2d(std::string name, Index fov, Index stride, Index ch_in,
               Index ch_out, std::uint64_t seed)
    : name_(std::move(name)),
      fov_(fov),
      stride_(stride),
      ch_in_(ch_in),
      ch_out_(ch_out),
      weight_(ch_out * ch_in * fov * fov),
      bias_(Vector::Zero(ch_out)),
      grad_weight_(Vector::Zero(weight_.size())),
      grad_bias_(Vector::Zero(ch_out)) {
  Rng rng(seed);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(ch_in * fov * fov));
  for (Index i = 0; i < weight_.size(); ++i) weight_[i] = std_dev * rng.normal();
}

Tensor4 Conv2d::forward(const Tensor4& in, Phase) {
  if (in.channels() != ch_in_) {
    throw DataError(name_ + ": expected " + std::to_string(ch_in_) +
                    " input channels, got " + std::to_string(in.channels()));
  }
  if (in.height() < fov_ || in.width() < fov_) {
    throw DataError(name_ + ": input smaller than the kernel");
  }
  input_ = in;
  const Index b = in.batch();
  const Index oh = conv_out(in.height(), fov_, stride_);
  const Index ow = conv_out(in.width(), fov_, stride_);
  const Index k = ch_in_ * fov_ * fov_;
  Tensor4 out(b, ch_out_, oh, ow);

  Eigen::Map<const Matrix> wmat(weight_.data(), k, ch_out_);  // column per out ch
  Matrix cols(k, kChunk * oh * ow);
  for (Index b0 = 0; b0 < b; b0 += kChunk) {
    const Index bn = std::min(kChunk, b - b0);
    cols.resize(k, bn * oh * ow);
    Index col = 0;
    for (Index bi = 0; bi < bn; ++bi) {
      for (Index y = 0; y < oh; ++y) {
        for (Index x = 0; x < ow; ++x, ++col) {
          Index row = 0;
          for (Index ci = 0; ci < ch_in_; ++ci) {
            for (Index ky = 0; ky < fov_; ++ky) {
              for (Index kx = 0; kx < fov_; ++kx, ++row) {
                cols(row, col) =
                    in.at(b0 + bi, ci, y * stride_ + ky, x * stride_ + kx);
              }
            }
          }
        }
      }
    }
    Matrix prod = wmat.transpose() * cols;  // ch_out x (bn*oh*ow)
    col = 0;
    for (Index bi = 0; bi < bn; ++bi) {
      for (Index y = 0; y < oh; ++y) {
        for (Index x = 0; x < ow; ++x, ++col) {
          for (Index co = 0; co < ch_out_; ++co) {
            out.at(b0 + bi, co, y, x) = prod(co, col) + bias_[co];
          }
        }
      }
    }
  }
  return out;
}

Tensor4 Conv2d::backward(const Tensor4& grad_out) {
  const Tensor4& in = input_;
  const Index b = in.batch();
  const Index oh = grad_out.height();
  const Index ow = grad_out.width();
  const Index k = ch_in_ * fov_ * fov_;

  grad_weight_.setZero();
  grad_bias_.setZero();
  Tensor4 grad_in(b, ch_in_, in.height(), in.width());

  Eigen::Map<const Matrix> wmat(weight_.data(), k, ch_out_);
  Eigen::Map<Matrix> gwmat(grad_weight_.data(), k, ch_out_);

  Matrix cols, gout;
  for (Index b0 = 0; b0 < b; b0 += kChunk) {
    const Index bn = std::min(kChunk, b - b0);
    cols.resize(k, bn * oh * ow);
    gout.resize(ch_out_, bn * oh * ow);
    Index col = 0;
    for (Index bi = 0; bi < bn; ++bi) {
      for (Index y = 0; y < oh; ++y) {
        for (Index x = 0; x < ow; ++x, ++col) {
          Index row = 0;
          for (Index ci = 0; ci < ch_in_; ++ci) {
            for (Index ky = 0; ky < fov_; ++ky) {
              for (Index kx = 0; kx < fov_; ++kx, ++row) {
                cols(row, col) =
                    in.at(b0 + bi, ci, y * stride_ + ky, x * stride_ + kx);
              }
            }
          }
          for (Index co = 0; co < ch_out_; ++co) {
            gout(co, col) = grad_out.at(b0 + bi, co, y, x);
          }
        }
      }
    }
    gwmat.noalias() += cols * gout.transpose();
    grad_bias_ += gout.rowwise().sum();
    Matrix gcols = wmat * gout;  // k x (bn*oh*ow)
    col = 0;
    for (Index bi = 0; bi < bn; ++bi) {
      for (Index y = 0; y < oh; ++y) {
        for (Index x = 0; x < ow; ++x, ++col) {
          Index row = 0;
          for (Index ci = 0; ci < ch_in_; ++ci) {
            for (Index ky = 0; ky < fov_; ++ky) {
              for (Index kx = 0; kx < fov_; ++kx, ++row) {
                grad_in.at(b0 + bi, ci, y * stride_ + ky, x * stride_ + kx) +=
                    gcols(row, col);
              }
            }
          }
        }
      }
    }
  }
  return grad_in;
}

std::vector<ParamRef> Conv2d::params() {
  return {{name_ + ".weight", &weight_, &grad_weight_},
          {name_ + ".bias", &bias_, &grad_bias_}};
}

Tensor4 Relu::forward(const Tensor4& in, Phase) {
  input_ = in;
  Tensor4 out = in;
  double* p = out.data();
  for (Index i = 0; i < out.size(); ++i) {
    if (p[i] < 0.0) p[i] = 0.0;
  }
  return out;
}

Tensor4 Relu::backward(const Tensor4& grad_out) {
  Tensor4 grad = grad_out;
  const double* x = input_.data();
  double* g = grad.data();
  for (Index i = 0; i < grad.size(); ++i) {
    if (x[i] <= 0.0) g[i] = 0.0;
  }
  return grad;
}

WhitenBlock::WhitenBlock(std::string name, WhiteningSpec spec, Index channels)
    : name_(std::move(name)),
      spec_(std::move(spec)),
      channels_(channels),
      params_(LayerParams::init(spec_, channels)),
      state_(LayerState::init(spec_, channels)) {
  spec_.validate();
  if (params_.has_scale()) {
    grad_gamma_ = Vector::Zero(channels);
    grad_bias_ = Vector::Zero(channels);
  }
  if (params_.has_rotation()) {
    grad_skew_ = Vector::Zero(skew_param_count(channels));
  }
}

Tensor4 WhitenBlock::forward(const Tensor4& in, Phase phase) {
  if (in.channels() != channels_) {
    throw DataError(name_ + ": channel count mismatch");
  }
  in_b_ = in.batch();
  in_h_ = in.height();
  in_w_ = in.width();
  const Index m = in_b_ * in_h_ * in_w_;
  Matrix x(channels_, m);
  for (Index b = 0; b < in_b_; ++b) {
    for (Index c = 0; c < channels_; ++c) {
      for (Index y = 0; y < in_h_; ++y) {
        for (Index xx = 0; xx < in_w_; ++xx) {
          x(c, (b * in_h_ + y) * in_w_ + xx) = in.at(b, c, y, xx);
        }
      }
    }
  }
  auto [z, cache] = layer_forward(spec_, x, params_, state_, phase);
  if (phase == Phase::Train) cache_ = std::move(cache);
  Tensor4 out(in_b_, channels_, in_h_, in_w_);
  for (Index b = 0; b < in_b_; ++b) {
    for (Index c = 0; c < channels_; ++c) {
      for (Index y = 0; y < in_h_; ++y) {
        for (Index xx = 0; xx < in_w_; ++xx) {
          out.at(b, c, y, xx) = z(c, (b * in_h_ + y) * in_w_ + xx);
        }
      }
    }
  }
  return out;
}

Tensor4 WhitenBlock::backward(const Tensor4& grad_out) {
  const Index m = in_b_ * in_h_ * in_w_;
  Matrix g(channels_, m);
  for (Index b = 0; b < in_b_; ++b) {
    for (Index c = 0; c < channels_; ++c) {
      for (Index y = 0; y < in_h_; ++y) {
        for (Index xx = 0; xx < in_w_; ++xx) {
          g(c, (b * in_h_ + y) * in_w_ + xx) = grad_out.at(b, c, y, xx);
        }
      }
    }
  }
  GradientSet grads = layer_backward(spec_, cache_, g);
  if (params_.has_scale()) {
    grad_gamma_ = grads.grad_gamma;
    grad_bias_ = grads.grad_bias;
  }
  if (params_.has_rotation()) {
    // one triangle parameter drives both (i,j) and (j,i) of S
    grad_skew_ = 2.0 * skew_from_matrix(grads.grad_skew);
  }
  Tensor4 out(in_b_, channels_, in_h_, in_w_);
  for (Index b = 0; b < in_b_; ++b) {
    for (Index c = 0; c < channels_; ++c) {
      for (Index y = 0; y < in_h_; ++y) {
        for (Index xx = 0; xx < in_w_; ++xx) {
          out.at(b, c, y, xx) = grads.grad_x(c, (b * in_h_ + y) * in_w_ + xx);
        }
      }
    }
  }
  return out;
}

std::vector<ParamRef> WhitenBlock::params() {
  std::vector<ParamRef> out;
  if (params_.has_scale()) {
    out.push_back({name_ + ".gamma", &params_.gamma, &grad_gamma_});
    out.push_back({name_ + ".bias", &params_.bias, &grad_bias_});
  }
  if (params_.has_rotation()) {
    out.push_back({name_ + ".skew", &params_.skew_upper, &grad_skew_});
  }
  return out;
}

Tensor4 GlobalAvgPool::forward(const Tensor4& in, Phase) {
  in_h_ = in.height();
  in_w_ = in.width();
  Tensor4 out(in.batch(), in.channels(), 1, 1);
  const double scale = 1.0 / static_cast<double>(in_h_ * in_w_);
  for (Index b = 0; b < in.batch(); ++b) {
    for (Index c = 0; c < in.channels(); ++c) {
      double acc = 0.0;
      for (Index y = 0; y < in_h_; ++y) {
        for (Index x = 0; x < in_w_; ++x) acc += in.at(b, c, y, x);
      }
      out.at(b, c, 0, 0) = acc * scale;
    }
  }
  return out;
}

Tensor4 GlobalAvgPool::backward(const Tensor4& grad_out) {
  Tensor4 grad(grad_out.batch(), grad_out.channels(), in_h_, in_w_);
  const double scale = 1.0 / static_cast<double>(in_h_ * in_w_);
  for (Index b = 0; b < grad.batch(); ++b) {
    for (Index c = 0; c < grad.channels(); ++c) {
      const double g = grad_out.at(b, c, 0, 0) * scale;
      for (Index y = 0; y < in_h_; ++y) {
        for (Index x = 0; x < in_w_; ++x) grad.at(b, c, y, x) = g;
      }
    }
  }
  return grad;
}

FullyConnected::FullyConnected(std::string name, Index in, Index out,
                               std::uint64_t seed)
    : name_(std::move(name)),
      in_(in),
      out_(out),
      weight_(in * out),
      bias_(Vector::Zero(out)),
      grad_weight_(Vector::Zero(in * out)),
      grad_bias_(Vector::Zero(out)) {
  Rng rng(seed);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in + out));
  for (Index i = 0; i < weight_.size(); ++i) weight_[i] = std_dev * rng.normal();
}

Tensor4 FullyConnected::forward(const Tensor4& in, Phase) {
  if (in.channels() != in_ || in.height() != 1 || in.width() != 1) {
    throw DataError(name_ + ": expected (batch, " + std::to_string(in_) +
                    ", 1, 1) input");
  }
  const Index b = in.batch();
  input_.resize(in_, b);
  for (Index bi = 0; bi < b; ++bi) {
    for (Index c = 0; c < in_; ++c) input_(c, bi) = in.at(bi, c, 0, 0);
  }
  Eigen::Map<const Matrix> wmat(weight_.data(), in_, out_);
  Matrix logits = wmat.transpose() * input_;
  logits.colwise() += bias_;
  Tensor4 out(b, out_, 1, 1);
  for (Index bi = 0; bi < b; ++bi) {
    for (Index c = 0; c < out_; ++c) out.at(bi, c, 0, 0) = logits(c, bi);
  }
  return out;
}

Tensor4 FullyConnected::backward(const Tensor4& grad_out) {
  const Index b = grad_out.batch();
  Matrix g(out_, b);
  for (Index bi = 0; bi < b; ++bi) {
    for (Index c = 0; c < out_; ++c) g(c, bi) = grad_out.at(bi, c, 0, 0);
  }
  Eigen::Map<Matrix> gwmat(grad_weight_.data(), in_, out_);
  gwmat = input_ * g.transpose();
  grad_bias_ = g.rowwise().sum();
  Eigen::Map<const Matrix> wmat(weight_.data(), in_, out_);
  Matrix gin = wmat * g;
  Tensor4 out(b, in_, 1, 1);
  for (Index bi = 0; bi < b; ++bi) {
    for (Index c = 0; c < in_; ++c) out.at(bi, c, 0, 0) = gin(c, bi);
  }
  return out;
}

std::vector<ParamRef> FullyConnected::params() {
  return {{name_ + ".weight", &weight_, &grad_weight_},
          {name_ + ".bias", &bias_, &grad_bias_}};
}

double SoftmaxXent::forward(const Tensor4& logits,
                            const std::vector<std::uint8_t>& labels) {
  const Index b = logits.batch();
  const Index k = logits.channels();
  if (static_cast<Index>(labels.size()) != b) {
    throw DataError("softmax: label count mismatch");
  }
  labels_ = labels;
  probs_.resize(k, b);
  double loss = 0.0;
  for (Index bi = 0; bi < b; ++bi) {
    double mx = logits.at(bi, 0, 0, 0);
    for (Index c = 1; c < k; ++c) mx = std::max(mx, logits.at(bi, c, 0, 0));
    double sum = 0.0;
    for (Index c = 0; c < k; ++c) {
      const double e = std::exp(logits.at(bi, c, 0, 0) - mx);
      probs_(c, bi) = e;
      sum += e;
    }
    probs_.col(bi) /= sum;
    loss -= std::log(std::max(probs_(labels[bi], bi), 1e-300));
  }
  return loss / static_cast<double>(b);
}

Tensor4 SoftmaxXent::backward() const {
  const Index k = probs_.rows();
  const Index b = probs_.cols();
  Tensor4 grad(b, k, 1, 1);
  const double scale = 1.0 / static_cast<double>(b);
  for (Index bi = 0; bi < b; ++bi) {
    for (Index c = 0; c < k; ++c) {
      grad.at(bi, c, 0, 0) =
          (probs_(c, bi) - (labels_[bi] == c ? 1.0 : 0.0)) * scale;
    }
  }
  return grad;
}

Tensor4 Net::forward(const Tensor4& images, Phase phase) {
  Tensor4 cur = images;
  for (auto& block : blocks_) {
    cur = block->forward(cur, phase);
    if (!cur.all_finite()) {
      throw NumericError("non-finite output from block '" + block->name() +
                         "'");
    }
  }
  return cur;
}

Tensor4 Net::backward(const Tensor4& grad) {
  Tensor4 cur = grad;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    cur = (*it)->backward(cur);
  }
  return cur;
}

std::vector<ParamRef> Net::params() {
  std::vector<ParamRef> out;
  for (auto& block : blocks_) {
    for (auto& p : block->params()) out.push_back(p);
  }
  return out;
}

std::vector<WhitenBlock*> Net::whiten_blocks() {
  std::vector<WhitenBlock*> out;
  for (auto& block : blocks_) {
    if (auto* w = dynamic_cast<WhitenBlock*>(block.get())) out.push_back(w);
  }
  return out;
}

Net build_net(DbKind db, const WhiteningSpec& norm, std::uint64_t seed) {
  struct ConvSpec {
    Index fov, stride, ch_in, ch_out;
  };
  const std::vector<ConvSpec> convs =
      db == DbKind::Mnist
          ? std::vector<ConvSpec>{{3, 1, 1, 16}, {4, 2, 16, 64}, {3, 1, 64, 128}}
          : std::vector<ConvSpec>{{3, 1, 3, 32}, {4, 2, 32, 64}, {3, 1, 64, 128}};
  Net net;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& c = convs[i];
    const std::string tag = std::to_string(i + 1);
    net.add(std::make_unique<Conv2d>("conv" + tag, c.fov, c.stride, c.ch_in,
                                     c.ch_out, derive_seed(seed, 100 + i)));
    net.add(std::make_unique<Relu>("relu" + tag));
    net.add(std::make_unique<WhitenBlock>("norm" + tag, norm, c.ch_out));
  }
  net.add(std::make_unique<GlobalAvgPool>("gap"));
  net.add(std::make_unique<FullyConnected>("fc", 128, 10,
                                           derive_seed(seed, 200)));
  return net;
}

}  // namespace whiten
