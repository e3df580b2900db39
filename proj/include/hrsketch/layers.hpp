#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>

#include "hrsketch/ops.hpp"
#include "hrsketch/rng.hpp"
#include "hrsketch/tensor.hpp"

namespace hrsketch {

// Called once per named tensor of a module. Buffers (batchnorm running
// statistics) are reported with trainable = false.
using ParamVisitor = std::function<void(const std::string& name, Tensor& t, bool trainable)>;

// Kaiming-style uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
void kaiming_uniform(Tensor& weight, std::size_t fan_in, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t padding, bool bias = false);

  Tensor forward(const Tensor& x) const;
  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  std::size_t weight_count() const { return weight.numel(); }
  std::size_t param_count() const;

  std::size_t in_channels = 0, out_channels = 0, kernel = 0, stride = 1, padding = 0;
  Tensor weight;
  Tensor bias;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor forward(const Tensor& x, bool training);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  std::size_t param_count() const { return gamma.numel() + beta.numel(); }

  Tensor gamma;
  Tensor beta;
  BatchNormState state;
};

// conv -> [batchnorm] -> [relu]
class ConvUnit {
 public:
  ConvUnit() = default;
  ConvUnit(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride, std::size_t padding, bool batchnorm, bool activation);

  Tensor forward(const Tensor& x, bool training);
  void init(Rng& rng) { conv.init(rng); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
  std::size_t param_count() const;

  Conv2d conv;
  std::optional<BatchNorm2d> norm;
  bool activation = false;
};

}  // namespace hrsketch
