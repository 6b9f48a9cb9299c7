#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "duoformer/ops.hpp"

namespace duo {

namespace {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

struct AxisSplit {
  Index outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit sp = split_axis(x.shape(), axis);
  const auto& v = x.data();
  Buffer<S> out(v.size());
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      const Index base = o * sp.extent * sp.inner + i;
      S hi = -std::numeric_limits<S>::infinity();
      for (Index a = 0; a < sp.extent; ++a) hi = std::max(hi, v[base + a * sp.inner]);
      S total = 0;
      for (Index a = 0; a < sp.extent; ++a) {
        const S e = std::exp(v[base + a * sp.inner] - hi);
        out[base + a * sp.inner] = e;
        total += e;
      }
      for (Index a = 0; a < sp.extent; ++a) out[base + a * sp.inner] /= total;
    }
  }
  return make_result<S>("softmax", x.shape(), std::move(out), {&x}, [x, sp](const Node<S>& self) {
    if (!x.requires_grad()) return;
    auto& g = x.node()->grad_buffer();
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (Index o = 0; o < sp.outer; ++o) {
      for (Index i = 0; i < sp.inner; ++i) {
        const Index base = o * sp.extent * sp.inner + i;
        S dot = 0;
        for (Index a = 0; a < sp.extent; ++a) dot += gy[base + a * sp.inner] * y[base + a * sp.inner];
        for (Index a = 0; a < sp.extent; ++a) {
          const Index j = base + a * sp.inner;
          g[j] += y[j] * (gy[j] - dot);
        }
      }
    }
  });
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit sp = split_axis(x.shape(), axis);
  const auto& v = x.data();
  Buffer<S> out(v.size());
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      const Index base = o * sp.extent * sp.inner + i;
      S hi = -std::numeric_limits<S>::infinity();
      for (Index a = 0; a < sp.extent; ++a) hi = std::max(hi, v[base + a * sp.inner]);
      S total = 0;
      for (Index a = 0; a < sp.extent; ++a) total += std::exp(v[base + a * sp.inner] - hi);
      const S lse = hi + std::log(total);
      for (Index a = 0; a < sp.extent; ++a) out[base + a * sp.inner] = v[base + a * sp.inner] - lse;
    }
  }
  return make_result<S>("log_softmax", x.shape(), std::move(out), {&x},
                        [x, sp](const Node<S>& self) {
                          if (!x.requires_grad()) return;
                          auto& g = x.node()->grad_buffer();
                          const auto& y = self.value;
                          const auto& gy = self.grad;
                          for (Index o = 0; o < sp.outer; ++o) {
                            for (Index i = 0; i < sp.inner; ++i) {
                              const Index base = o * sp.extent * sp.inner + i;
                              S total = 0;
                              for (Index a = 0; a < sp.extent; ++a) total += gy[base + a * sp.inner];
                              for (Index a = 0; a < sp.extent; ++a) {
                                const Index j = base + a * sp.inner;
                                g[j] += gy[j] - std::exp(y[j]) * total;
                              }
                            }
                          }
                        });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  const Index d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm parameters " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " do not match input " + to_string(x.shape()));
  }
  const Index rows = x.numel() / d;
  ConstMatMap<S> X(x.data().data(), rows, d);
  // Normalized input and reciprocal std are kept for the backward pass.
  auto xhat = std::make_shared<RowMatrix<S>>(rows, d);
  auto rstd = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(rows);
  for (Index r = 0; r < rows; ++r) {
    const S mu = X.row(r).mean();
    const S var = (X.row(r).array() - mu).square().mean();
    (*rstd)[r] = S(1) / std::sqrt(var + eps);
    xhat->row(r) = (X.row(r).array() - mu) * (*rstd)[r];
  }
  Buffer<S> out(x.numel());
  MatMap<S> Y(out.data(), rows, d);
  const auto g_row = gamma.data().matrix().transpose();
  const auto b_row = beta.data().matrix().transpose();
  for (Index r = 0; r < rows; ++r) {
    Y.row(r) = (xhat->row(r).array() * g_row.array() + b_row.array()).matrix();
  }
  return make_result<S>(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [x, gamma, beta, xhat, rstd, rows, d](const Node<S>& self) {
        ConstMatMap<S> G(self.grad.data(), rows, d);
        if (gamma.requires_grad()) {
          gamma.node()->grad_buffer() += (G.array() * xhat->array()).colwise().sum().transpose();
        }
        if (beta.requires_grad()) {
          beta.node()->grad_buffer() += G.array().colwise().sum().transpose();
        }
        if (x.requires_grad()) {
          MatMap<S> GX(x.node()->grad_buffer().data(), rows, d);
          const auto g_row = gamma.data().matrix().transpose();
          for (Index r = 0; r < rows; ++r) {
            const Eigen::Array<S, 1, Eigen::Dynamic> dxhat = G.row(r).array() * g_row.array();
            const S mean_d = dxhat.mean();
            const S mean_dx = (dxhat * xhat->row(r).array()).mean();
            GX.row(r).array() += (*rstd)[r] * (dxhat - mean_d - xhat->row(r).array() * mean_dx);
          }
        }
      });
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const Index classes = logits.dim(1);
  for (auto l : labels) {
    if (l < 0 || l >= classes) throw ContractError("label " + std::to_string(l) + " out of range");
  }
  const Tensor<S> lp = log_softmax(logits, 1);
  const Index batch = logits.dim(0);
  std::vector<Index> picks(labels.size());
  for (Index b = 0; b < batch; ++b) picks[b] = b * classes + labels[b];
  const Tensor<S> flat = reshape(lp, {batch * classes});
  return scale(sum(index_select(flat, 0, picks)), S(-1) / static_cast<S>(batch));
}

// ---- convolution ------------------------------------------------------------

namespace {

struct ConvGeometry {
  Index batch, c_in, h, w, c_out, k, h_out, w_out;
  int stride, padding;
  Index cols() const { return h_out * w_out; }
  Index patch() const { return c_in * k * k; }
};

// Unfolds one image [C, H, W] into a [C·k·k, H_out·W_out] column matrix.
template <typename S>
void im2col(const S* image, const ConvGeometry& g, S* cols) {
  for (Index c = 0; c < g.c_in; ++c) {
    for (Index ky = 0; ky < g.k; ++ky) {
      for (Index kx = 0; kx < g.k; ++kx) {
        S* row = cols + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (Index oy = 0; oy < g.h_out; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          for (Index ox = 0; ox < g.w_out; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            row[oy * g.w_out + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                         ? image[(c * g.h + iy) * g.w + ix]
                                         : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* cols, const ConvGeometry& g, S* image) {
  for (Index c = 0; c < g.c_in; ++c) {
    for (Index ky = 0; ky < g.k; ++ky) {
      for (Index kx = 0; kx < g.k; ++kx) {
        const S* row = cols + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (Index oy = 0; oy < g.h_out; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (Index ox = 0; ox < g.w_out; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.w) image[(c * g.h + iy) * g.w + ix] += row[oy * g.w_out + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, int stride,
                 int padding) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("conv2d expects [C,H,W] or [B,C,H,W], got " + to_string(x.shape()));
  }
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw DimensionError("conv2d weight must be [C_out, C_in, k, k], got " +
                         to_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw DimensionError("conv2d stride must be >= 1");
  const bool batched = x.rank() == 4;
  ConvGeometry g{};
  g.batch = batched ? x.dim(0) : 1;
  g.c_in = x.dim(-3);
  g.h = x.dim(-2);
  g.w = x.dim(-1);
  g.c_out = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.padding = padding;
  if (weight.dim(1) != g.c_in) {
    throw DimensionError("conv2d input " + to_string(x.shape()) + " has " +
                         std::to_string(g.c_in) + " channels but weight " +
                         to_string(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
  }
  if (g.k > g.h + 2 * padding || g.k > g.w + 2 * padding) {
    throw DimensionError("conv2d kernel " + std::to_string(g.k) + " larger than padded input " +
                         to_string(x.shape()));
  }
  if (bias.defined() && bias.numel() != g.c_out) {
    throw DimensionError("conv2d bias " + to_string(bias.shape()) + " does not match " +
                         std::to_string(g.c_out) + " output channels");
  }
  g.h_out = (g.h + 2 * padding - g.k) / stride + 1;
  g.w_out = (g.w + 2 * padding - g.k) / stride + 1;

  Shape out_shape = {g.c_out, g.h_out, g.w_out};
  if (batched) out_shape.insert(out_shape.begin(), g.batch);
  Buffer<S> out(numel(out_shape));
  RowMatrix<S> cols(g.patch(), g.cols());
  ConstMatMap<S> W(weight.data().data(), g.c_out, g.patch());
  for (Index b = 0; b < g.batch; ++b) {
    im2col(x.data().data() + b * g.c_in * g.h * g.w, g, cols.data());
    MatMap<S> Y(out.data() + b * g.c_out * g.cols(), g.c_out, g.cols());
    Y.noalias() = W * cols;
    if (bias.defined()) Y.colwise() += bias.data().matrix();
  }
  return make_result<S>(
      "conv2d", std::move(out_shape), std::move(out), {&x, &weight, &bias},
      [x, weight, bias, g](const Node<S>& self) {
        RowMatrix<S> cols(g.patch(), g.cols());
        RowMatrix<S> dcols(g.patch(), g.cols());
        ConstMatMap<S> W(weight.data().data(), g.c_out, g.patch());
        for (Index b = 0; b < g.batch; ++b) {
          ConstMatMap<S> G(self.grad.data() + b * g.c_out * g.cols(), g.c_out, g.cols());
          if (weight.requires_grad()) {
            im2col(x.data().data() + b * g.c_in * g.h * g.w, g, cols.data());
            MatMap<S>(weight.node()->grad_buffer().data(), g.c_out, g.patch()).noalias() +=
                G * cols.transpose();
          }
          if (bias.defined() && bias.requires_grad()) {
            bias.node()->grad_buffer() += G.rowwise().sum().array();
          }
          if (x.requires_grad()) {
            dcols.noalias() = W.transpose() * G;
            col2im(dcols.data(), g, x.node()->grad_buffer().data() + b * g.c_in * g.h * g.w);
          }
        }
      });
}

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, int kernel, int stride) {
  if (x.rank() < 2) throw DimensionError("max_pool2d expects [..., H, W]");
  if (kernel < 1 || stride < 1) throw DimensionError("max_pool2d kernel and stride must be >= 1");
  const Index h = x.dim(-2), w = x.dim(-1);
  if (kernel == stride && (h % stride != 0 || w % stride != 0)) {
    throw DimensionError("max_pool2d: extent " + to_string(x.shape()) +
                         " not divisible by stride " + std::to_string(stride));
  }
  if (kernel > h || kernel > w) {
    throw DimensionError("max_pool2d kernel larger than input " + to_string(x.shape()));
  }
  const Index h_out = (h - kernel) / stride + 1;
  const Index w_out = (w - kernel) / stride + 1;
  const Index planes = x.numel() / (h * w);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = h_out;
  out_shape[out_shape.size() - 1] = w_out;
  Buffer<S> out(planes * h_out * w_out);
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
  const auto& v = x.data();
  for (Index p = 0; p < planes; ++p) {
    for (Index oy = 0; oy < h_out; ++oy) {
      for (Index ox = 0; ox < w_out; ++ox) {
        Index best = p * h * w + (oy * stride) * w + ox * stride;
        for (Index ky = 0; ky < kernel; ++ky) {
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index j = p * h * w + (oy * stride + ky) * w + ox * stride + kx;
            if (v[j] > v[best]) best = j;
          }
        }
        const Index o = (p * h_out + oy) * w_out + ox;
        out[o] = v[best];
        (*argmax)[o] = best;
        record_branch(static_cast<std::uint64_t>(best));
      }
    }
  }
  return make_result<S>("max_pool2d", std::move(out_shape), std::move(out), {&x},
                        [x, argmax](const Node<S>& self) {
                          if (!x.requires_grad()) return;
                          auto& g = x.node()->grad_buffer();
                          for (Index o = 0; o < self.grad.size(); ++o) g[(*argmax)[o]] += self.grad[o];
                        });
}

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     RunningStats<S>& stats, NormMode mode, S momentum, S eps) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw DimensionError("batch_norm expects [B,C] or [B,C,H,W], got " + to_string(x.shape()));
  }
  const Index batch = x.dim(0);
  const Index channels = x.dim(1);
  const Index spatial = x.numel() / (batch * channels);
  if (gamma.numel() != channels || beta.numel() != channels || stats.mean.numel() != channels ||
      stats.var.numel() != channels) {
    throw DimensionError("batch_norm parameters do not match " + std::to_string(channels) +
                         " channels of " + to_string(x.shape()));
  }
  const Index count = batch * spatial;
  if (mode == NormMode::train && count < 2) {
    throw NumericError("batch_norm in train mode needs more than one value per channel, got " +
                       to_string(x.shape()));
  }
  const auto& v = x.data();
  Buffer<S> mu(channels), rstd(channels);
  if (mode == NormMode::train) {
    for (Index c = 0; c < channels; ++c) {
      S total = 0;
      for (Index b = 0; b < batch; ++b) {
        total += v.segment((b * channels + c) * spatial, spatial).sum();
      }
      const S m = total / static_cast<S>(count);
      S sq = 0;
      for (Index b = 0; b < batch; ++b) {
        sq += (v.segment((b * channels + c) * spatial, spatial) - m).square().sum();
      }
      const S var = sq / static_cast<S>(count);
      mu[c] = m;
      rstd[c] = S(1) / std::sqrt(var + eps);
      auto& rm = stats.mean.mutable_data();
      auto& rv = stats.var.mutable_data();
      rm[c] = (S(1) - momentum) * rm[c] + momentum * m;
      rv[c] = (S(1) - momentum) * rv[c] + momentum * sq / static_cast<S>(count - 1);
    }
  } else {
    mu = stats.mean.data();
    rstd = (stats.var.data() + eps).rsqrt();
  }
  auto xhat = std::make_shared<Buffer<S>>(v.size());
  Buffer<S> out(v.size());
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      const Index off = (b * channels + c) * spatial;
      xhat->segment(off, spatial) = (v.segment(off, spatial) - mu[c]) * rstd[c];
      out.segment(off, spatial) = xhat->segment(off, spatial) * gamma.data()[c] + beta.data()[c];
    }
  }
  const bool train = mode == NormMode::train;
  return make_result<S>(
      "batch_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [x, gamma, beta, xhat, rstd, batch, channels, spatial, count, train](const Node<S>& self) {
        const auto& gy = self.grad;
        for (Index c = 0; c < channels; ++c) {
          S sum_g = 0, sum_gx = 0;
          for (Index b = 0; b < batch; ++b) {
            const Index off = (b * channels + c) * spatial;
            sum_g += gy.segment(off, spatial).sum();
            sum_gx += (gy.segment(off, spatial) * xhat->segment(off, spatial)).sum();
          }
          if (gamma.requires_grad()) gamma.node()->grad_buffer()[c] += sum_gx;
          if (beta.requires_grad()) beta.node()->grad_buffer()[c] += sum_g;
          if (!x.requires_grad()) continue;
          auto& gx = x.node()->grad_buffer();
          const S k = gamma.data()[c] * rstd[c];
          const S n = static_cast<S>(count);
          for (Index b = 0; b < batch; ++b) {
            const Index off = (b * channels + c) * spatial;
            if (train) {
              gx.segment(off, spatial) +=
                  k * (gy.segment(off, spatial) - sum_g / n -
                       xhat->segment(off, spatial) * (sum_gx / n));
            } else {
              gx.segment(off, spatial) += k * gy.segment(off, spatial);
            }
          }
        }
      });
}

#define DUO_INSTANTIATE(S)                                                                      \
  template Tensor<S> softmax(const Tensor<S>&, int);                                            \
  template Tensor<S> log_softmax(const Tensor<S>&, int);                                        \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);       \
  template Tensor<S> cross_entropy(const Tensor<S>&, const std::vector<std::int64_t>&);         \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);    \
  template Tensor<S> max_pool2d(const Tensor<S>&, int, int);                                    \
  template Tensor<S> batch_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,           \
                                RunningStats<S>&, NormMode, S, S);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
