#include "hrsketch/blocks.hpp"

namespace hrsketch {

namespace {

std::optional<ConvUnit> make_projection(std::size_t in_ch, std::size_t out_ch,
                                        std::size_t stride, const BlockOptions& opts) {
  if (in_ch == out_ch && stride == 1) return std::nullopt;
  return ConvUnit(in_ch, out_ch, 1, stride, 0, opts.batchnorm, false);
}

}  // namespace

BasicBlock::BasicBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride,
                       BlockOptions opts)
    : conv1(in_ch, out_ch, 3, stride, 1, opts.batchnorm, true),
      conv2(out_ch, out_ch, 3, 1, 1, opts.batchnorm, false),
      projection(make_projection(in_ch, out_ch, stride, opts)),
      options(opts) {}

Tensor BasicBlock::forward(const Tensor& x, ForwardContext& ctx) {
  Tensor skip = projection ? projection->forward(x, ctx.training) : x;
  Tensor residual = conv2.forward(conv1.forward(x, ctx.training), ctx.training);
  Tensor y = add(skip, residual);
  return options.post_activation ? relu(y) : y;
}

void BasicBlock::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
  if (projection) projection->init(rng);
}

void BasicBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  conv1.visit(prefix + ".conv1", fn);
  conv2.visit(prefix + ".conv2", fn);
  if (projection) projection->visit(prefix + ".proj", fn);
}

std::size_t BasicBlock::conv_weight_count() const {
  return conv1.conv.weight_count() + conv2.conv.weight_count();
}

std::size_t BasicBlock::param_count() {
  return conv1.param_count() + conv2.param_count() +
         (projection ? projection->param_count() : 0);
}

MultiScaleBlock::MultiScaleBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride,
                                 double alpha, BlockOptions opts)
    : left1(in_ch, out_ch, 3, stride, 1, opts.batchnorm, true),
      left2(out_ch, out_ch, 3, 1, 1, opts.batchnorm, false),
      right(in_ch, out_ch, 3, stride, 1, opts.batchnorm, false),
      projection(make_projection(in_ch, out_ch, stride, opts)),
      options(opts),
      alpha_(alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ContractError("branch weight alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
}

Tensor MultiScaleBlock::skip_path(const Tensor& x, bool training) {
  return projection ? projection->forward(x, training) : x;
}

Tensor MultiScaleBlock::finish(const Tensor& skip, const Tensor& residual) {
  Tensor y = add(skip, residual);
  return options.post_activation ? relu(y) : y;
}

Tensor MultiScaleBlock::forward(const Tensor& x, ForwardContext& ctx) {
  if (!ctx.training) return forward_eval(x);
  if (ctx.rng == nullptr) throw ContractError("training forward needs an rng");
  return forward_train(x, *ctx.rng);
}

Tensor MultiScaleBlock::forward_eval(const Tensor& x, BranchCapture* capture) {
  Tensor skip = skip_path(x, false);
  Tensor a = left2.forward(left1.forward(x, false), false);
  Tensor b = right.forward(x, false);
  if (a.shape() != b.shape()) {
    throw DimensionError("multi-scale branches disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  if (capture) {
    capture->skip = skip.clone();
    capture->left = a.clone();
    capture->right = b.clone();
  }
  last_branch_ = Branch::both;
  return finish(skip, add(scale(a, alpha_), scale(b, 1.0 - alpha_)));
}

Tensor MultiScaleBlock::forward_train(const Tensor& x, Rng& rng) {
  Tensor skip = skip_path(x, true);
  Tensor residual;
  if (bernoulli(rng, alpha_)) {
    last_branch_ = Branch::left;
    residual = left2.forward(left1.forward(x, true), true);
  } else {
    last_branch_ = Branch::right;
    residual = right.forward(x, true);
  }
  if (residual.shape() != skip.shape()) {
    throw DimensionError("multi-scale branch output " + shape_str(residual.shape()) +
                         " does not match skip " + shape_str(skip.shape()));
  }
  return finish(skip, residual);
}

void MultiScaleBlock::init(Rng& rng) {
  left1.init(rng);
  left2.init(rng);
  right.init(rng);
  if (projection) projection->init(rng);
}

void MultiScaleBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  left1.visit(prefix + ".left1", fn);
  left2.visit(prefix + ".left2", fn);
  right.visit(prefix + ".right", fn);
  if (projection) projection->visit(prefix + ".proj", fn);
}

std::size_t MultiScaleBlock::left_conv_weight_count() const {
  return left1.conv.weight_count() + left2.conv.weight_count();
}

std::size_t MultiScaleBlock::right_conv_weight_count() const {
  return right.conv.weight_count();
}

std::size_t MultiScaleBlock::conv_weight_count() const {
  return left_conv_weight_count() + right_conv_weight_count();
}

std::size_t MultiScaleBlock::active_conv_weight_count() const {
  switch (last_branch_) {
    case Branch::left: return left_conv_weight_count();
    case Branch::right: return right_conv_weight_count();
    case Branch::both: return conv_weight_count();
    case Branch::none: break;
  }
  return 0;
}

std::size_t MultiScaleBlock::param_count() {
  return left1.param_count() + left2.param_count() + right.param_count() +
         (projection ? projection->param_count() : 0);
}

double expected_active_params(double n_p, double alpha) {
  if (n_p < 0.0) throw ContractError("parameter count must be nonnegative");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ContractError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  return n_p * (alpha + 1.0) / 2.0;
}

}  // namespace hrsketch
