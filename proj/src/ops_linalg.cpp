#include <Eigen/Dense>

#include "broadcast.hpp"
#include "duoformer/ops.hpp"

namespace duo {

namespace {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

struct MatmulPlan {
  Index m = 0, k = 0, n = 0;
  Index batches = 1;
  // Per output batch: matrix index into a and b. Empty when b is a plain
  // matrix shared by every row block of a.
  std::vector<Index> a_batch, b_batch;
  bool flat = false;
};

}  // namespace

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
  }
  auto plan = std::make_shared<MatmulPlan>();
  plan->m = a.dim(-2);
  plan->k = a.dim(-1);
  plan->n = b.dim(-1);
  if (b.dim(-2) != plan->k) {
    throw DimensionError("matmul inner extents differ: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape out_shape;
  if (b_batch.empty() || numel(b_batch) == 1) {
    plan->flat = true;
    out_shape = a_batch;
    if (b_batch.size() > a_batch.size()) {
      out_shape.insert(out_shape.begin(), b_batch.size() - a_batch.size(), 1);
    }
    plan->batches = numel(a_batch);
  } else {
    Shape batch;
    try {
      batch = broadcast_shapes(a_batch, b_batch);
    } catch (const DimensionError&) {
      throw DimensionError("matmul batch extents incompatible: " + to_string(a.shape()) + " x " +
                           to_string(b.shape()));
    }
    plan->batches = numel(batch);
    plan->a_batch = detail::operand_offsets(a_batch, batch);
    plan->b_batch = detail::operand_offsets(b_batch, batch);
    out_shape = batch;
  }
  out_shape.push_back(plan->m);
  out_shape.push_back(plan->n);

  const Index m = plan->m, k = plan->k, n = plan->n;
  Buffer<S> out(numel(out_shape));
  if (plan->flat) {
    const Index rows = plan->batches * m;
    MatMap<S>(out.data(), rows, n).noalias() =
        ConstMatMap<S>(a.data().data(), rows, k) * ConstMatMap<S>(b.data().data(), k, n);
  } else {
    for (Index t = 0; t < plan->batches; ++t) {
      MatMap<S>(out.data() + t * m * n, m, n).noalias() =
          ConstMatMap<S>(a.data().data() + plan->a_batch[t] * m * k, m, k) *
          ConstMatMap<S>(b.data().data() + plan->b_batch[t] * k * n, k, n);
    }
  }

  return make_result<S>("matmul", std::move(out_shape), std::move(out), {&a, &b},
                        [a, b, plan](const Node<S>& self) {
                          const Index m = plan->m, k = plan->k, n = plan->n;
                          const S* g = self.grad.data();
                          if (plan->flat) {
                            const Index rows = plan->batches * m;
                            ConstMatMap<S> G(g, rows, n);
                            if (a.requires_grad()) {
                              MatMap<S>(a.node()->grad_buffer().data(), rows, k).noalias() +=
                                  G * ConstMatMap<S>(b.data().data(), k, n).transpose();
                            }
                            if (b.requires_grad()) {
                              MatMap<S>(b.node()->grad_buffer().data(), k, n).noalias() +=
                                  ConstMatMap<S>(a.data().data(), rows, k).transpose() * G;
                            }
                            return;
                          }
                          for (Index t = 0; t < plan->batches; ++t) {
                            ConstMatMap<S> G(g + t * m * n, m, n);
                            const Index ia = plan->a_batch[t] * m * k;
                            const Index ib = plan->b_batch[t] * k * n;
                            if (a.requires_grad()) {
                              MatMap<S>(a.node()->grad_buffer().data() + ia, m, k).noalias() +=
                                  G * ConstMatMap<S>(b.data().data() + ib, k, n).transpose();
                            }
                            if (b.requires_grad()) {
                              MatMap<S>(b.node()->grad_buffer().data() + ib, k, n).noalias() +=
                                  ConstMatMap<S>(a.data().data() + ia, m, k).transpose() * G;
                            }
                          }
                        });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  Tensor<S> y = matmul(x, weight);
  if (!bias.defined()) return y;
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(1)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  return add(y, bias);
}

#define DUO_INSTANTIATE(S)                                                        \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
