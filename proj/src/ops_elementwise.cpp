#include <cmath>
#include <numbers>

#include "duoformer/ops.hpp"
#include "broadcast.hpp"

namespace duo {

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const Index ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const Index eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace {

// For every element of the broadcast output, the offset into each operand.
struct BroadcastPlan {
  Shape out_shape;
  std::vector<Index> a_offsets;
  std::vector<Index> b_offsets;
  bool identical = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out_shape = a;
    plan.identical = true;
    return plan;
  }
  plan.out_shape = broadcast_shapes(a, b);
  plan.a_offsets = detail::operand_offsets(a, plan.out_shape);
  plan.b_offsets = detail::operand_offsets(b, plan.out_shape);
  return plan;
}

// Shared driver for the four broadcasting binary operations. `forward`
// computes f(a, b); `da`/`db` return ∂f/∂a and ∂f/∂b at (a, b).
template <typename S, typename F, typename DA, typename DB>
Tensor<S> binary(const char* op, const Tensor<S>& a, const Tensor<S>& b, F forward, DA da,
                 DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  const Index n = numel(plan->out_shape);
  Buffer<S> out(n);
  const auto& av = a.data();
  const auto& bv = b.data();
  if (plan->identical) {
    for (Index i = 0; i < n; ++i) out[i] = forward(av[i], bv[i]);
  } else {
    for (Index i = 0; i < n; ++i) {
      out[i] = forward(av[plan->a_offsets[i]], bv[plan->b_offsets[i]]);
    }
  }
  return make_result<S>(op, plan->out_shape, std::move(out), {&a, &b},
                        [a, b, plan, da, db](const Node<S>& self) {
                          const auto& g = self.grad;
                          const auto& av = a.data();
                          const auto& bv = b.data();
                          const Index n = g.size();
                          if (a.requires_grad()) {
                            auto& ga = a.node()->grad_buffer();
                            for (Index i = 0; i < n; ++i) {
                              const Index ia = plan->identical ? i : plan->a_offsets[i];
                              const Index ib = plan->identical ? i : plan->b_offsets[i];
                              ga[ia] += g[i] * da(av[ia], bv[ib]);
                            }
                          }
                          if (b.requires_grad()) {
                            auto& gb = b.node()->grad_buffer();
                            for (Index i = 0; i < n; ++i) {
                              const Index ia = plan->identical ? i : plan->a_offsets[i];
                              const Index ib = plan->identical ? i : plan->b_offsets[i];
                              gb[ib] += g[i] * db(av[ia], bv[ib]);
                            }
                          }
                        });
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "div", a, b, [](S x, S y) { return x / y; }, [](S, S y) { return S(1) / y; },
      [](S x, S y) { return -x / (y * y); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  return make_result<S>("scale", x.shape(), x.data() * factor, {&x},
                        [x, factor](const Node<S>& self) { accumulate_grad(x, self.grad * factor); });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S value) {
  return make_result<S>("add_scalar", x.shape(), x.data() + value, {&x},
                        [x](const Node<S>& self) { accumulate_grad(x, self.grad); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  if (branch_trace_active()) {
    const auto& v = x.data();
    for (Index i = 0; i < v.size(); ++i) record_branch(static_cast<std::uint64_t>(i) * 2 + (v[i] > S(0)));
  }
  return make_result<S>("relu", x.shape(), x.data().max(S(0)), {&x}, [x](const Node<S>& self) {
    accumulate_grad(x, (x.data() > S(0)).select(self.grad, S(0)));
  });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S k = S(0.044715);
  const auto& v = x.data();
  Buffer<S> inner = c * (v + k * v.cube());
  Buffer<S> out = S(0.5) * v * (S(1) + inner.tanh());
  return make_result<S>("gelu", x.shape(), std::move(out), {&x}, [x, c, k](const Node<S>& self) {
    const auto& v = x.data();
    const Buffer<S> t = (c * (v + k * v.cube())).tanh();
    const Buffer<S> d =
        S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t.square()) * c * (S(1) + S(3) * k * v.square());
    accumulate_grad(x, self.grad * d);
  });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return make_result<S>("exp", x.shape(), x.data().exp(), {&x},
                        [x](const Node<S>& self) { accumulate_grad(x, self.grad * self.value); });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return make_result<S>("log", x.shape(), x.data().log(), {&x},
                        [x](const Node<S>& self) { accumulate_grad(x, self.grad / x.data()); });
}

// ---- reductions -------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Buffer<S> out(1);
  out[0] = x.data().sum();
  return make_result<S>("sum", Shape{}, std::move(out), {&x}, [x](const Node<S>& self) {
    accumulate_grad(x, Buffer<S>::Constant(x.numel(), self.grad[0]));
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x, int axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank());
  const Shape& shape = x.shape();
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= shape[i];
  const Index extent = shape[axis];
  Buffer<S> out = Buffer<S>::Zero(outer * inner);
  const auto& v = x.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index a = 0; a < extent; ++a) {
      out.segment(o * inner, inner) += v.segment((o * extent + a) * inner, inner);
    }
  }
  Shape out_shape = shape;
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  return make_result<S>("sum_axis", out_shape, std::move(out), {&x},
                        [x, outer, inner, extent](const Node<S>& self) {
                          if (!x.requires_grad()) return;
                          auto& g = x.node()->grad_buffer();
                          for (Index o = 0; o < outer; ++o) {
                            for (Index a = 0; a < extent; ++a) {
                              g.segment((o * extent + a) * inner, inner) +=
                                  self.grad.segment(o * inner, inner);
                            }
                          }
                        });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x, int axis, bool keepdim) {
  const Index extent = x.dim(axis);
  return scale(sum(x, axis, keepdim), S(1) / static_cast<S>(extent));
}

#define DUO_INSTANTIATE(S)                                                 \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> div(const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> scale(const Tensor<S>&, S);                           \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                      \
  template Tensor<S> relu(const Tensor<S>&);                               \
  template Tensor<S> gelu(const Tensor<S>&);                               \
  template Tensor<S> exp(const Tensor<S>&);                                \
  template Tensor<S> log(const Tensor<S>&);                                \
  template Tensor<S> sum(const Tensor<S>&);                                \
  template Tensor<S> mean(const Tensor<S>&);                               \
  template Tensor<S> sum(const Tensor<S>&, int, bool);                     \
  template Tensor<S> mean(const Tensor<S>&, int, bool);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
