#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ctssg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::shared_ptr<std::vector<double>> values;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major array of doubles. Copies share the underlying node, so a
/// Tensor behaves like a handle; values are never mutated by ops, only by
/// optimizers writing into parameter leaves.
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Writable view of the storage. Only meaningful for leaves (parameters).
  std::span<double> mutable_values();
  double operator[](std::size_t i) const { return values()[i]; }
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  /// Gradient accumulated by Tape::backward; empty span when none arrived.
  std::span<const double> grad() const;
  void zero_grad();

  /// New leaf sharing this tensor's storage but holding its own gradient.
  /// Used to run independent backward passes over shared parameters.
  Tensor leaf_view() const;
  /// Deep copy into a fresh leaf.
  Tensor clone(bool requires_grad) const;
  Tensor clone() const { return clone(requires_grad()); }

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of differentiable ops executed while the tape is active on
/// the current thread. A tape belongs to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Seeds d(root)/d(root) = 1 and replays recorded ops in reverse order.
  /// `root` must be a single-element tensor.
  void backward(const Tensor& root);

  /// Drops every recorded op together with the intermediates it kept alive.
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

  void record(std::shared_ptr<detail::TensorNode> output, BackwardFn fn);

  /// Tape receiving ops on this thread, or nullptr.
  static Tape* active();

  /// Makes `tape` (possibly nullptr, meaning "record nothing") active for the
  /// lifetime of the scope.
  class Scope {
   public:
    explicit Scope(Tape* tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  struct Entry {
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

}  // namespace ctssg
