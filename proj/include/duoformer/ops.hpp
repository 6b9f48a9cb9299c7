#pragma once

#include <cstdint>
#include <vector>

#include "duoformer/tensor.hpp"

// Differentiable tensor operations. All functions are free templates over the
// scalar type, instantiated for float and double.
namespace duo {

// ---- elementwise with numpy-style broadcasting -----------------------------

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b);

template <typename S> Tensor<S> scale(const Tensor<S>& x, S factor);
template <typename S> Tensor<S> add_scalar(const Tensor<S>& x, S value);
template <typename S> Tensor<S> relu(const Tensor<S>& x);
// tanh approximation
template <typename S> Tensor<S> gelu(const Tensor<S>& x);
template <typename S> Tensor<S> exp(const Tensor<S>& x);
template <typename S> Tensor<S> log(const Tensor<S>& x);

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S> Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& x, S factor) { return scale(x, factor); }
template <typename S> Tensor<S> operator*(S factor, const Tensor<S>& x) { return scale(x, factor); }

// Broadcast result shape; throws DimensionError naming both shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// ---- reductions -------------------------------------------------------------

template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);
template <typename S> Tensor<S> sum(const Tensor<S>& x, int axis, bool keepdim = false);
template <typename S> Tensor<S> mean(const Tensor<S>& x, int axis, bool keepdim = false);

// ---- layout -----------------------------------------------------------------

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S> Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& perm);
template <typename S> Tensor<S> transpose(const Tensor<S>& x, int axis0, int axis1);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis);
template <typename S> Tensor<S> slice(const Tensor<S>& x, int axis, Index start, Index length);
// Gathers entries along `axis`; indices may repeat (backward scatter-adds).
template <typename S>
Tensor<S> index_select(const Tensor<S>& x, int axis, const std::vector<Index>& indices);

// ---- linear algebra ---------------------------------------------------------

// a[..., m, k] · b[..., k, n] with broadcast leading extents.
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
// x[..., in] · weight[in, out] + bias[out]; bias may be undefined.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

// ---- normalization and losses ----------------------------------------------

// Max-subtracted softmax along `axis`.
template <typename S> Tensor<S> softmax(const Tensor<S>& x, int axis);
template <typename S> Tensor<S> log_softmax(const Tensor<S>& x, int axis);

// Normalizes over the last axis.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-6));

// Mean softmax cross-entropy of logits[B, C] against integer labels.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<std::int64_t>& labels);

// ---- convolutional ----------------------------------------------------------

// x is [C_in, H, W] or [B, C_in, H, W]; weight is [C_out, C_in, k, k]; bias
// [C_out] may be undefined.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, int stride,
                 int padding);

// Spatial max over k×k windows of x[..., H, W]. Ties route the gradient to the
// first maximum in row-major window order.
template <typename S> Tensor<S> max_pool2d(const Tensor<S>& x, int kernel, int stride);

enum class NormMode { train, eval };

template <typename S>
struct RunningStats {
  Tensor<S> mean;
  Tensor<S> var;
};

// x is [B, C] or [B, C, H, W]; statistics are per channel (axis 1). Train mode
// normalizes with batch statistics and updates `stats` in place.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     RunningStats<S>& stats, NormMode mode, S momentum = S(0.1),
                     S eps = S(1e-5));

}  // namespace duo
