#include "hrsketch/layers.hpp"

#include <cmath>

namespace hrsketch {

void kaiming_uniform(Tensor& weight, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& w : weight.mutable_values()) w = uniform(rng, -bound, bound);
}

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t s,
               std::size_t p, bool with_bias)
    : in_channels(in_ch), out_channels(out_ch), kernel(k), stride(s), padding(p),
      weight(Shape{out_ch, in_ch, k, k}, 0.0, true) {
  if (with_bias) bias = Tensor(Shape{out_ch}, 0.0, true);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

void Conv2d::init(Rng& rng) {
  const std::size_t fan_in = in_channels * kernel * kernel;
  kaiming_uniform(weight, fan_in, rng);
  if (bias.defined()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& b : bias.mutable_values()) b = uniform(rng, -bound, bound);
  }
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight, true);
  if (bias.defined()) fn(prefix + ".bias", bias, true);
}

std::size_t Conv2d::param_count() const {
  return weight.numel() + (bias.defined() ? bias.numel() : 0);
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Shape{channels}, 1.0, true), beta(Shape{channels}, 0.0, true) {
  state.running_mean = Tensor(Shape{channels}, 0.0);
  state.running_var = Tensor(Shape{channels}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  return batch_norm(x, gamma, beta, state, training);
}

void BatchNorm2d::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gamma", gamma, true);
  fn(prefix + ".beta", beta, true);
  fn(prefix + ".running_mean", state.running_mean, false);
  fn(prefix + ".running_var", state.running_var, false);
}

ConvUnit::ConvUnit(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t s,
                   std::size_t p, bool batchnorm, bool act)
    : conv(in_ch, out_ch, k, s, p, !batchnorm), activation(act) {
  if (batchnorm) norm.emplace(out_ch);
}

Tensor ConvUnit::forward(const Tensor& x, bool training) {
  Tensor y = conv.forward(x);
  if (norm) y = norm->forward(y, training);
  if (activation) y = relu(y);
  return y;
}

void ConvUnit::visit(const std::string& prefix, const ParamVisitor& fn) {
  conv.visit(prefix + ".conv", fn);
  if (norm) norm->visit(prefix + ".bn", fn);
}

std::size_t ConvUnit::param_count() const {
  return conv.param_count() + (norm ? norm->param_count() : 0);
}

}  // namespace hrsketch
