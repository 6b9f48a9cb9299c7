#include <numeric>

#include "duoformer/ops.hpp"

namespace duo {

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  Index inferred = -1;
  Index known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (inferred >= 0) throw DimensionError("reshape accepts at most one -1 extent");
      inferred = static_cast<Index>(i);
    } else {
      known *= shape[i];
    }
  }
  if (inferred >= 0 && known > 0 && x.numel() % known == 0) shape[inferred] = x.numel() / known;
  if (numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return make_result<S>("reshape", std::move(shape), x.data(), {&x},
                        [x](const Node<S>& self) { accumulate_grad(x, self.grad); });
}

namespace {

// Moves data from layout `shape` into the permuted layout. `out[j] = in[src[j]]`.
std::vector<Index> permutation_sources(const Shape& shape, const std::vector<int>& perm) {
  const int rank = static_cast<int>(shape.size());
  const Shape in_strides = strides_of(shape);
  Shape out_shape(rank);
  Shape strides(rank);
  for (int i = 0; i < rank; ++i) {
    out_shape[i] = shape[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  const Index total = numel(shape);
  std::vector<Index> src(static_cast<std::size_t>(total));
  Shape counter(rank, 0);
  Index offset = 0;
  for (Index n = 0; n < total; ++n) {
    src[static_cast<std::size_t>(n)] = offset;
    for (int axis = rank - 1; axis >= 0; --axis) {
      if (++counter[axis] < out_shape[axis]) {
        offset += strides[axis];
        break;
      }
      offset -= strides[axis] * (out_shape[axis] - 1);
      counter[axis] = 0;
    }
  }
  return src;
}

}  // namespace

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& perm) {
  const int rank = x.rank();
  if (static_cast<int>(perm.size()) != rank) {
    throw DimensionError("permutation length does not match rank of " + to_string(x.shape()));
  }
  std::vector<int> seen(rank, 0);
  for (int p : perm) {
    if (p < 0 || p >= rank || seen[p]++) throw DimensionError("invalid permutation");
  }
  Shape out_shape(rank);
  for (int i = 0; i < rank; ++i) out_shape[i] = x.shape()[perm[i]];
  auto src = std::make_shared<std::vector<Index>>(permutation_sources(x.shape(), perm));
  const auto& v = x.data();
  Buffer<S> out(x.numel());
  for (Index j = 0; j < out.size(); ++j) out[j] = v[(*src)[j]];
  return make_result<S>("permute", std::move(out_shape), std::move(out), {&x},
                        [x, src](const Node<S>& self) {
                          if (!x.requires_grad()) return;
                          auto& g = x.node()->grad_buffer();
                          for (Index j = 0; j < self.grad.size(); ++j) g[(*src)[j]] += self.grad[j];
                        });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x, int axis0, int axis1) {
  std::vector<int> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[normalize_axis(axis0, x.rank())], perm[normalize_axis(axis1, x.rank())]);
  return permute(x, perm);
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const int rank = parts.front().rank();
  axis = normalize_axis(axis, rank);
  Shape out_shape = parts.front().shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool compatible = p.rank() == rank;
    for (int i = 0; compatible && i < rank; ++i) {
      if (i != axis && p.shape()[i] != parts.front().shape()[i]) compatible = false;
    }
    if (!compatible) {
      throw DimensionError("concat: " + to_string(p.shape()) + " incompatible with " +
                           to_string(parts.front().shape()) + " along axis " +
                           std::to_string(axis));
    }
    out_shape[axis] += p.shape()[axis];
  }
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[i];
  const Index out_row = out_shape[axis] * inner;

  Buffer<S> out(numel(out_shape));
  Index column = 0;
  for (const auto& p : parts) {
    const Index chunk = p.shape()[axis] * inner;
    for (Index o = 0; o < outer; ++o) {
      out.segment(o * out_row + column, chunk) = p.data().segment(o * chunk, chunk);
    }
    column += chunk;
  }
  return make_result<S>("concat", std::move(out_shape), std::move(out), parts,
                        [parts, outer, inner, out_row, axis](const Node<S>& self) {
                          Index column = 0;
                          for (const auto& p : parts) {
                            const Index chunk = p.shape()[axis] * inner;
                            if (p.requires_grad()) {
                              auto& g = p.node()->grad_buffer();
                              for (Index o = 0; o < outer; ++o) {
                                g.segment(o * chunk, chunk) +=
                                    self.grad.segment(o * out_row + column, chunk);
                              }
                            }
                            column += chunk;
                          }
                        });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, Index start, Index length) {
  axis = normalize_axis(axis, x.rank());
  const Index extent = x.shape()[axis];
  if (start < 0 || length <= 0 || start + length > extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for axis " +
                         std::to_string(axis) + " of " + to_string(x.shape()));
  }
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Buffer<S> out(numel(out_shape));
  for (Index o = 0; o < outer; ++o) {
    out.segment(o * length * inner, length * inner) =
        x.data().segment((o * extent + start) * inner, length * inner);
  }
  return make_result<S>("slice", std::move(out_shape), std::move(out), {&x},
                        [x, outer, inner, extent, start, length](const Node<S>& self) {
                          if (!x.requires_grad()) return;
                          auto& g = x.node()->grad_buffer();
                          for (Index o = 0; o < outer; ++o) {
                            g.segment((o * extent + start) * inner, length * inner) +=
                                self.grad.segment(o * length * inner, length * inner);
                          }
                        });
}

template <typename S>
Tensor<S> index_select(const Tensor<S>& x, int axis, const std::vector<Index>& indices) {
  axis = normalize_axis(axis, x.rank());
  const Index extent = x.shape()[axis];
  for (Index i : indices) {
    if (i < 0 || i >= extent) {
      throw DimensionError("index " + std::to_string(i) + " out of range for axis " +
                           std::to_string(axis) + " of " + to_string(x.shape()));
    }
  }
  if (indices.empty()) throw DimensionError("index_select with no indices");
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const Index count = static_cast<Index>(indices.size());
  Shape out_shape = x.shape();
  out_shape[axis] = count;
  Buffer<S> out(numel(out_shape));
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < count; ++j) {
      out.segment((o * count + j) * inner, inner) =
          x.data().segment((o * extent + indices[j]) * inner, inner);
    }
  }
  return make_result<S>("index_select", std::move(out_shape), std::move(out), {&x},
                        [x, indices, outer, inner, extent, count](const Node<S>& self) {
                          if (!x.requires_grad()) return;
                          auto& g = x.node()->grad_buffer();
                          for (Index o = 0; o < outer; ++o) {
                            for (Index j = 0; j < count; ++j) {
                              g.segment((o * extent + indices[j]) * inner, inner) +=
                                  self.grad.segment((o * count + j) * inner, inner);
                            }
                          }
                        });
}

#define DUO_INSTANTIATE(S)                                                              \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                  \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<int>&);                \
  template Tensor<S> transpose(const Tensor<S>&, int, int);                             \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                        \
  template Tensor<S> slice(const Tensor<S>&, int, Index, Index);                        \
  template Tensor<S> index_select(const Tensor<S>&, int, const std::vector<Index>&);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
