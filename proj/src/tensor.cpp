#include "hkd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hkd {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) +
                     " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void check_finite(const std::vector<double>& values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + what);
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-sized dimension in " + shape_str(shape));
  }
  auto n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-sized dimension in " + shape_str(shape));
  }
  check_finite(values, "Tensor::from");
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) throw ShapeError("axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = node_->shape;
  if (index.size() != s.size()) throw ShapeError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) throw TapeError("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(new_node(node_->shape, node_->value, false)); }

Tensor Tensor::clone() const { return Tensor(new_node(node_->shape, node_->value, node_->requires_grad)); }

std::uint64_t Tensor::id() const { return node_->seq; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool NoGradGuard::grad_enabled() { return t_grad_enabled; }

bool any_requires_grad(std::initializer_list<const Tensor*> tensors) {
  for (const auto* t : tensors) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward, const char* op_name) {
  check_finite(values, op_name);
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) {
      if (p.node()->consumed) {
        throw TapeError(std::string(op_name) + ": input belongs to a graph that was already backpropagated");
      }
      needs = needs || p.requires_grad();
    }
  }
  auto node = new_node(std::move(shape), std::move(values), needs);
  if (needs) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tape::Tape(const Tensor& loss) : loss_(loss.node()) {
  if (!loss_) throw TapeError("backward on an undefined tensor");
  if (loss_->value.size() != 1) throw TapeError("backward requires a scalar loss, got " + shape_str(loss_->shape));
  if (loss_->consumed) throw TapeError("stale tape: backward already ran for this graph");

  // Iterative DFS over recorded ops.
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{loss_.get()};
  std::vector<std::shared_ptr<detail::Node>> found;
  if (loss_->backward_fn) found.push_back(loss_);
  seen.insert(loss_.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    for (const auto& p : n->parents) {
      if (!p->requires_grad || !seen.insert(p.get()).second) continue;
      if (p->consumed) throw TapeError("stale tape: graph contains an already-backpropagated op");
      if (p->backward_fn) found.push_back(p);
      stack.push_back(p.get());
    }
  }
  // Sequence numbers increase in creation order, so ascending order is a
  // valid topological order of the forward computation.
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a->seq < b->seq; });
  ops_ = std::move(found);
}

std::vector<std::uint64_t> Tape::forward_order() const {
  std::vector<std::uint64_t> out;
  out.reserve(ops_.size());
  for (const auto& n : ops_) out.push_back(n->seq);
  return out;
}

void Tape::backward() {
  if (done_ || loss_->consumed) throw TapeError("stale tape: backward already ran for this graph");
  done_ = true;
  if (!loss_->requires_grad) {
    loss_->consumed = true;
    return;
  }
  loss_->ensure_grad()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    auto& n = **it;
    if (!n.grad.empty()) n.backward_fn(n);
  }
  for (auto& n : ops_) {
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->consumed = true;
  }
  loss_->consumed = true;
}

void backward(const Tensor& loss) { Tape(loss).backward(); }

}  // namespace hkd
