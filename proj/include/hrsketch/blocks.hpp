#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>

#include "hrsketch/layers.hpp"
#include "hrsketch/rng.hpp"

namespace hrsketch {

struct BlockOptions {
  bool batchnorm = true;
  // relu after the skip addition; disabled only for linearity experiments
  bool post_activation = true;
};

// Mode and randomness for one forward pass. Training forwards sample
// branches from `rng`; eval forwards never touch it.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

enum class Branch { none, left, right, both };

// Residual unit interface shared by the basic and multi-scale blocks so a
// network can be assembled from either (block ablation).
class ResidualBlock {
 public:
  virtual ~ResidualBlock() = default;
  virtual Tensor forward(const Tensor& x, ForwardContext& ctx) = 0;
  virtual void init(Rng& rng) = 0;
  virtual void visit(const std::string& prefix, const ParamVisitor& fn) = 0;
  // weights of the 3x3 convolutions on the residual path (no bias, no norm,
  // no skip projection)
  virtual std::size_t conv_weight_count() const = 0;
  // conv weights that took part in the most recent forward pass
  virtual std::size_t active_conv_weight_count() const = 0;
  virtual std::size_t param_count() = 0;
};

// Two 3x3 convolutions with an identity or 1x1-projected skip.
class BasicBlock final : public ResidualBlock {
 public:
  BasicBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
             BlockOptions opts = {});

  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void init(Rng& rng) override;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;
  std::size_t conv_weight_count() const override;
  std::size_t active_conv_weight_count() const override { return conv_weight_count(); }
  std::size_t param_count() override;

  ConvUnit conv1;
  ConvUnit conv2;
  std::optional<ConvUnit> projection;
  BlockOptions options;
};

// Residual path outputs captured during an eval forward.
struct BranchCapture {
  Tensor skip;
  Tensor left;   // two-conv branch
  Tensor right;  // one-conv branch
};

// Multi-scale residual block.
//
// Left branch: two 3x3 convs (receptive field 5x5). Right branch: one 3x3
// conv. At eval both run and are fused as
//     y = skip + alpha * left(x) + (1 - alpha) * right(x).
// In training exactly one branch runs per forward: left with probability
// alpha, otherwise right, and the output is skip + branch(x). The branch
// that did not run is absent from the graph and gets no gradient and no
// batchnorm statistics update. Since the same alpha is the fusion weight and
// the sampling probability, the eval output is the expectation of the train
// output when the rest of the block is linear.
class MultiScaleBlock final : public ResidualBlock {
 public:
  MultiScaleBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                  double alpha, BlockOptions opts = {});

  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  Tensor forward_eval(const Tensor& x, BranchCapture* capture = nullptr);
  Tensor forward_train(const Tensor& x, Rng& rng);

  void init(Rng& rng) override;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;
  std::size_t conv_weight_count() const override;
  std::size_t active_conv_weight_count() const override;
  std::size_t param_count() override;
  std::size_t left_conv_weight_count() const;
  std::size_t right_conv_weight_count() const;

  double alpha() const { return alpha_; }
  Branch last_branch() const { return last_branch_; }

  ConvUnit left1;
  ConvUnit left2;
  ConvUnit right;
  std::optional<ConvUnit> projection;
  BlockOptions options;

 private:
  Tensor skip_path(const Tensor& x, bool training);
  Tensor finish(const Tensor& skip, const Tensor& residual);

  double alpha_;
  Branch last_branch_ = Branch::none;
};

// Expected number of active parameters under random branch activation when
// the basic-block network has n_p of them: n_p (alpha + 1) / 2.
double expected_active_params(double n_p, double alpha);

}  // namespace hrsketch
