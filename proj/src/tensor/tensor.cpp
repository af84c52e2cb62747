#include "ctssg/tensor.hpp"

#include <sstream>

#include "ctssg/errors.hpp"

namespace ctssg {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(values->size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->values = std::make_shared<std::vector<double>>(n, 0.0);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->values = std::make_shared<std::vector<double>>(std::move(values));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= rank()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::numel() const { return node_->values->size(); }

std::span<const double> Tensor::values() const { return *node_->values; }

std::span<double> Tensor::mutable_values() { return *node_->values; }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return (*node_->values)[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::leaf_view() const {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = node_->shape;
  node->values = node_->values;
  node->requires_grad = node_->requires_grad;
  return from_node(std::move(node));
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(shape(), *node_->values, requires_grad);
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape* tape) : previous_(g_active_tape) { g_active_tape = tape; }

Tape::Scope::~Scope() { g_active_tape = previous_; }

void Tape::record(std::shared_ptr<detail::TensorNode> output, BackwardFn fn) {
  entries_.push_back(Entry{std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw DimensionError("backward() needs a single-element root");
  }
  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn(it->output->grad);
  }
}

}  // namespace ctssg
