#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hkd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when a shape, size or argument contract is violated.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or infinity enters a tensor.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on misuse of the gradient tape (stale graph, non-scalar loss, missing grad).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major double tensor with an optional reverse-mode gradient.
///
/// Tensors are cheap handles: copies share the same storage and graph node.
/// Results of differentiable ops record their parents only when at least one
/// input requires a gradient, so inference-only passes build no graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;
  Tensor clone() const;

  std::uint64_t id() const;

  // Internal; used by ops to build graph nodes.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Builds the result of an op. `backward` is attached (and the parents kept
/// alive) only if some parent requires a gradient. Throws NumericError on
/// non-finite values.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward, const char* op_name);

/// True if any of the tensors requires a gradient.
bool any_requires_grad(std::initializer_list<const Tensor*> tensors);

/// While alive on a thread, ops on that thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

/// Ordered record of the operations reachable from a scalar loss, each
/// appearing after all of its inputs.
class Tape {
 public:
  explicit Tape(const Tensor& loss);

  /// Number of recorded operations (leaves excluded).
  std::size_t size() const { return ops_.size(); }
  /// Creation sequence numbers in forward (topological) order.
  std::vector<std::uint64_t> forward_order() const;

  /// Propagates d(loss)/d(node) to every reachable requires_grad tensor and
  /// then releases the graph. A second call throws TapeError.
  void backward();

 private:
  std::shared_ptr<detail::Node> loss_;
  std::vector<std::shared_ptr<detail::Node>> ops_;  // forward order
  bool done_ = false;
};

/// Convenience: Tape(loss).backward().
void backward(const Tensor& loss);

}  // namespace hkd
