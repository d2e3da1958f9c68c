#pragma once

#include <memory>
#include <string>
#include <vector>

#include "whiten/data.hpp"
#include "whiten/layers.hpp"
#include "whiten/tensor.hpp"

namespace whiten {

/// View of one learnable tensor (flattened) and its gradient slot.
struct ParamRef {
  std::string name;
  Vector* value;
  Vector* grad;
};

class Block {
 public:
  virtual ~Block() = default;
  virtual Tensor4 forward(const Tensor4& in, Phase phase) = 0;
  virtual Tensor4 backward(const Tensor4& grad_out) = 0;
  virtual std::vector<ParamRef> params() { return {}; }
  virtual std::string name() const = 0;
};

/// fov x fov convolution of the given stride, no padding:
/// out = floor((in - fov)/stride) + 1. im2col + GEMM in batch chunks.
class Conv2d : public Block {
 public:
  Conv2d(std::string name, Index fov, Index stride, Index ch_in, Index ch_out,
         std::uint64_t seed);

  Tensor4 forward(const Tensor4& in, Phase phase) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  std::vector<ParamRef> params() override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Index fov_, stride_, ch_in_, ch_out_;
  Vector weight_;  // (ch_out) x (ch_in*fov*fov), row-major
  Vector bias_;
  Vector grad_weight_, grad_bias_;
  Tensor4 input_;
};

class Relu : public Block {
 public:
  explicit Relu(std::string name) : name_(std::move(name)) {}
  Tensor4 forward(const Tensor4& in, Phase phase) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Tensor4 input_;
};

/// Whitening layer over pooled per-channel statistics: every spatial
/// position of every sample counts as one statistical sample, so
/// M = batch * height * width with N = channels.
class WhitenBlock : public Block {
 public:
  WhitenBlock(std::string name, WhiteningSpec spec, Index channels);

  Tensor4 forward(const Tensor4& in, Phase phase) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  std::vector<ParamRef> params() override;
  std::string name() const override { return name_; }

  WhiteningSpec& spec() { return spec_; }
  const WhiteningSpec& spec() const { return spec_; }
  LayerParams& layer_params() { return params_; }
  LayerState& state() { return state_; }
  void set_alpha(double alpha) { spec_.alpha = alpha; }

 private:
  std::string name_;
  WhiteningSpec spec_;
  Index channels_;
  LayerParams params_;
  LayerState state_;
  ForwardCache cache_;
  Vector grad_gamma_, grad_bias_, grad_skew_;
  Index in_h_ = 0, in_w_ = 0, in_b_ = 0;
};

class GlobalAvgPool : public Block {
 public:
  explicit GlobalAvgPool(std::string name) : name_(std::move(name)) {}
  Tensor4 forward(const Tensor4& in, Phase phase) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Index in_h_ = 0, in_w_ = 0;
};

class FullyConnected : public Block {
 public:
  FullyConnected(std::string name, Index in, Index out, std::uint64_t seed);
  Tensor4 forward(const Tensor4& in, Phase phase) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  std::vector<ParamRef> params() override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Index in_, out_;
  Vector weight_;  // out x in, row-major
  Vector bias_;
  Vector grad_weight_, grad_bias_;
  Matrix input_;  // in x batch
};

/// Mean cross-entropy over the batch; backward is (softmax - onehot)/batch.
class SoftmaxXent {
 public:
  double forward(const Tensor4& logits, const std::vector<std::uint8_t>& labels);
  Tensor4 backward() const;
  const Matrix& probs() const { return probs_; }

 private:
  Matrix probs_;  // classes x batch
  std::vector<std::uint8_t> labels_;
};

class Net {
 public:
  void add(std::unique_ptr<Block> block) { blocks_.push_back(std::move(block)); }

  /// Runs every block, checking for non-finite activations; the error names
  /// the first block that produced one.
  Tensor4 forward(const Tensor4& images, Phase phase);
  Tensor4 backward(const Tensor4& grad);

  std::vector<ParamRef> params();
  std::vector<WhitenBlock*> whiten_blocks();
  const std::vector<std::unique_ptr<Block>>& blocks() const { return blocks_; }

 private:
  std::vector<std::unique_ptr<Block>> blocks_;
};

/// The published desk nets: three conv blocks (each conv -> ReLU -> norm),
/// global average pooling and a 10-way classifier.
///   mnist: C(3,1,1,16) C(4,2,16,64) C(3,1,64,128) FC(128,10)
///   svhn:  C(3,1,3,32) C(4,2,32,64) C(3,1,64,128) FC(128,10)
Net build_net(DbKind db, const WhiteningSpec& norm, std::uint64_t seed);

}  // namespace whiten
