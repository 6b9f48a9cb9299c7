#include "duoformer/tensor.hpp"

#include <sstream>

namespace duo {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int normalize_axis(int axis, int rank) {
  const int resolved = axis < 0 ? axis + rank : axis;
  if (resolved < 0 || resolved >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return resolved;
}

Shape strides_of(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

namespace {
thread_local bool g_grad_mode = true;

void check_shape(const Shape& shape) {
  for (Index e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
}
}  // namespace

bool grad_mode_enabled() { return g_grad_mode; }

namespace {

thread_local bool g_branch_active = false;
thread_local std::uint64_t g_branch_signature = 0;

}  // namespace

BranchTrace::BranchTrace() : previous_active_(g_branch_active), previous_signature_(g_branch_signature) {
  g_branch_active = true;
  g_branch_signature = 0xcbf29ce484222325ULL;
}

BranchTrace::~BranchTrace() {
  g_branch_active = previous_active_;
  g_branch_signature = previous_signature_;
}

std::uint64_t BranchTrace::signature() const { return g_branch_signature; }

bool branch_trace_active() { return g_branch_active; }

void record_branch(std::uint64_t decision) {
  if (!g_branch_active) return;
  g_branch_signature = (g_branch_signature ^ decision) * 0x100000001b3ULL;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill) : node_(std::make_shared<node_type>()) {
  check_shape(shape);
  node_->value = Buffer<Scalar>::Constant(duo::numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Buffer<Scalar> data) : node_(std::make_shared<node_type>()) {
  check_shape(shape);
  if (duo::numel(shape) != data.size()) {
    throw DimensionError("buffer of " + std::to_string(data.size()) +
                         " elements does not fill shape " + to_string(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(data);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_values(Shape shape, std::initializer_list<Scalar> values) {
  return from_vector(std::move(shape), std::vector<Scalar>(values));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_vector(Shape shape, const std::vector<Scalar>& values) {
  Buffer<Scalar> data(static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) data[static_cast<Index>(i)] = values[i];
  return Tensor(std::move(shape), std::move(data));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  return node_->shape[normalize_axis(axis, rank())];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->value[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw DimensionError("index rank does not match tensor rank");
  }
  const Shape strides = strides_of(shape());
  Index offset = 0;
  int axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= shape()[axis]) throw DimensionError("index out of range");
    offset += i * strides[axis++];
  }
  return node_->value[offset];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

template <typename Scalar>
const Buffer<Scalar>& Tensor<Scalar>::grad() const {
  if (!has_grad()) throw ContractError("tensor has no accumulated gradient");
  return node_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  if (node_->grad.size() == node_->value.size()) node_->grad.setZero();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(node_->shape, node_->value);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  Tensor copy(node_->shape, node_->value);
  copy.set_requires_grad(node_->requires_grad && node_->is_leaf());
  return copy;
}

namespace {

template <typename Scalar>
Tensor<Scalar> finish(const char* op, Shape shape, Buffer<Scalar> value, bool needs_graph,
                      std::vector<std::shared_ptr<Node<Scalar>>> parents,
                      std::function<void(const Node<Scalar>&)> backward) {
  if (!value.allFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (needs_graph) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor<Scalar>(std::move(node));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Shape shape, Buffer<Scalar> value,
                           std::initializer_list<const Tensor<Scalar>*> inputs,
                           std::function<void(const Node<Scalar>&)> backward) {
  bool needs_graph = false;
  std::vector<std::shared_ptr<Node<Scalar>>> parents;
  if (g_grad_mode) {
    for (const auto* t : inputs) {
      if (t && t->defined() && t->requires_grad()) {
        needs_graph = true;
        parents.push_back(t->node());
      }
    }
  }
  return finish(op, std::move(shape), std::move(value), needs_graph, std::move(parents),
                std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Shape shape, Buffer<Scalar> value,
                           const std::vector<Tensor<Scalar>>& inputs,
                           std::function<void(const Node<Scalar>&)> backward) {
  bool needs_graph = false;
  std::vector<std::shared_ptr<Node<Scalar>>> parents;
  if (g_grad_mode) {
    for (const auto& t : inputs) {
      if (t.requires_grad()) {
        needs_graph = true;
        parents.push_back(t.node());
      }
    }
  }
  return finish(op, std::move(shape), std::move(value), needs_graph, std::move(parents),
                std::move(backward));
}

#define DUO_INSTANTIATE(S)                                                                   \
  template class Tensor<S>;                                                                  \
  template Tensor<S> make_result<S>(const char*, Shape, Buffer<S>,                           \
                                    std::initializer_list<const Tensor<S>*>,                 \
                                    std::function<void(const Node<S>&)>);                    \
  template Tensor<S> make_result<S>(const char*, Shape, Buffer<S>,                           \
                                    const std::vector<Tensor<S>>&,                           \
                                    std::function<void(const Node<S>&)>);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
