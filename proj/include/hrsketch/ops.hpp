#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "hrsketch/tensor.hpp"

namespace hrsketch {

// Spatial operators accept [C,H,W] or [N,C,H,W]; the output keeps the rank of
// the input. Output side length follows floor((H + 2p - k) / s) + 1.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding);

// weight: [C_out, C_in, k, k]; bias: [C_out] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding);
Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride,
              std::size_t padding);

// Padding cells never win. Ties go to the lowest flat input index.
Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride,
                  std::size_t padding);
Tensor avg_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride);

// Per-channel normalisation over every axis except the channel axis (axis 1
// for rank >= 2 batched input, axis 0 for [C,H,W]). In training mode batch
// statistics are used and the running buffers are updated in place.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduce the trailing axis: [..., d] -> [...].
Tensor sum_last(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// rows of a [K,d] table picked by index -> [M,d]
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);

// -log softmax(logits)[label]. logits [n] with one label, or [N,n] with N
// labels averaged over the batch.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label);

std::vector<double> softmax(std::span<const double> logits);
std::size_t argmax(std::span<const double> v);

}  // namespace hrsketch
