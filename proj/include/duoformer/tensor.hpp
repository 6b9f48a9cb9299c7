#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "duoformer/errors.hpp"

namespace duo {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Resolves a possibly negative axis against `rank`.
int normalize_axis(int axis, int rank);

// Row-major strides for `shape`.
Shape strides_of(const Shape& shape);

// One vertex of the autodiff graph. Leaves have no backward function.
template <typename Scalar>
struct Node {
  Shape shape;
  Buffer<Scalar> value;
  Buffer<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Receives the node itself so closures can read the output value and the
  // incoming gradient without holding a reference cycle.
  std::function<void(const Node&)> backward;

  bool is_leaf() const { return !backward; }

  // Returns the gradient buffer, zero-allocating on first use.
  Buffer<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Buffer<Scalar>::Zero(value.size());
    return grad;
  }
};

// Dense row-major n-dimensional array. Copies share the underlying node, so a
// Tensor behaves like a handle; use clone() for an independent value.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using node_type = Node<Scalar>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, Buffer<Scalar> data);
  explicit Tensor(std::shared_ptr<node_type> node) : node_(std::move(node)) {}

  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values);
  static Tensor from_vector(Shape shape, const std::vector<Scalar>& values);
  static Tensor scalar(Scalar value) { return Tensor(Shape{}, value); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return node_->value.size(); }

  const Buffer<Scalar>& data() const { return node_->value; }
  // In-place access for optimizers and initializers; bypasses the graph.
  Buffer<Scalar>& mutable_data() { return node_->value; }

  Scalar item() const;
  Scalar at(std::initializer_list<Index> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Buffer<Scalar>& grad() const;
  Buffer<Scalar>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Same values, no graph history, no gradient requirement.
  Tensor detach() const;
  // Independent deep copy of values; keeps the requires_grad flag.
  Tensor clone() const;

  const std::shared_ptr<node_type>& node() const { return node_; }

 private:
  std::shared_ptr<node_type> node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// While alive, piecewise operations (relu masks, max-pool argmax positions)
// fold their branch decisions into a signature on the current thread. Two
// evaluations with equal signatures lie on the same smooth piece.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t signature() const;

 private:
  bool previous_active_;
  std::uint64_t previous_signature_;
};

bool branch_trace_active();
void record_branch(std::uint64_t decision);

// Builds the result node of an operation. When any input requires a gradient
// (and grad mode is on) the node records its parents and backward closure;
// otherwise the closure is dropped and no graph is retained. Throws
// NumericError if `value` contains NaN/Inf.
template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Shape shape, Buffer<Scalar> value,
                           std::initializer_list<const Tensor<Scalar>*> inputs,
                           std::function<void(const Node<Scalar>&)> backward);

template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Shape shape, Buffer<Scalar> value,
                           const std::vector<Tensor<Scalar>>& inputs,
                           std::function<void(const Node<Scalar>&)> backward);

// Adds `delta` into the gradient of `t` if it participates in the graph.
template <typename Scalar, typename Expr>
void accumulate_grad(const Tensor<Scalar>& t, const Expr& delta) {
  if (t.requires_grad()) t.node()->grad_buffer() += delta;
}

}  // namespace duo
