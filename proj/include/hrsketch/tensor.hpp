#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hrsketch/errors.hpp"

namespace hrsketch {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the autodiff graph. Every value produced while gradient
// recording is enabled owns a Node; parents are the operands it was computed
// from and backward_fn pushes this node's grad into theirs.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  std::uint64_t seq = 0;     // creation order; backward visits descending seq
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

std::uint64_t next_seq();

}  // namespace detail

// Dense row-major array of doubles with an optional gradient slot.
//
// Tensor is a shared handle: copies alias the same storage, so a parameter
// held by a layer and the copy recorded in a graph are the same object.
// Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Mutating values in place bypasses the graph; only for leaves.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, no history, fresh storage.
  Tensor clone() const;
  // Same values, no history, requires_grad off.
  Tensor detach() const { return clone(); }

  const std::string& op() const;
  std::uint64_t seq() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Scope guard that disables graph recording (eval forwards, finite-difference
// probes). Nests.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Build a non-leaf tensor. If recording is on and any parent requires grad,
// the result keeps the parents and the backward rule; otherwise it is a
// plain constant.
Tensor make_result(Shape shape, std::vector<double> values, std::string op,
                   std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn);

// Nodes reachable from `root` that take part in backward, in the order
// backward visits them (reverse creation order).
std::vector<std::shared_ptr<detail::Node>> backward_order(const Tensor& root);

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable tensor with requires_grad. A graph can be swept once.
void backward(const Tensor& loss);

}  // namespace hrsketch
