#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sdscl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Graph node shared by every Tensor handle that refers to it.
///
/// `backward` reads `grad` of this node and accumulates into the grads of
/// `inputs`. Leaves and constants have no inputs and no backward function.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  /// Allocates a zero gradient buffer if none exists yet.
  std::vector<double>& ensure_grad();
};

/// Dense row-major double-precision array with reverse-mode autodiff.
///
/// A Tensor is a cheap handle; copies alias the same storage. Use `clone()`
/// for a deep copy and `detach()` to cut the graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct write access; intended for optimizers and finite-difference probes.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient after backward; empty span when none was propagated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, no history, no gradient requirement.
  Tensor detach() const;
  /// Deep copy of values as a new leaf.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an op result; records history only when an input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward);

/// Nodes reachable from a root, ordered so that every node follows its inputs.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::span<Node* const> nodes() const { return nodes_; }
  bool empty() const { return nodes_.empty(); }

  /// Runs every backward function once, in reverse record order.
  void run_backward() const;

 private:
  std::vector<Node*> nodes_;
  std::vector<std::shared_ptr<Node>> keep_alive_;
};

/// Populates gradients of every requires_grad tensor reachable from `loss`.
/// Gradients accumulate; call zero_grad() on leaves between steps.
void backward(const Tensor& loss);

}  // namespace sdscl
