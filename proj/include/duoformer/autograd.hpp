#pragma once

#include <functional>
#include <vector>

#include "duoformer/random.hpp"
#include "duoformer/tensor.hpp"

namespace duo {

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// `loss`. Intermediate gradients are reset first, so calling twice on the same
// graph doubles the leaf gradients rather than compounding.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates sampled per parameter; 0 checks every coordinate.
  int samples_per_param = 0;
  std::uint64_t seed = 0;
  // Multiplies the analytic gradient before comparison. 1.0 in normal use;
  // anything else simulates a broken backward pass.
  double analytic_scale = 1.0;
  // Skip coordinates whose ±step evaluations take different branches of a
  // piecewise op (relu, max pooling); the central difference is not a valid
  // derivative estimate across a kink.
  bool skip_kinks = true;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  int coordinates = 0;
  // Coordinates excluded because the perturbation crossed a kink.
  int skipped_kinks = 0;
  // Per-parameter maxima, parallel to the `params` argument.
  std::vector<double> per_param;
};

// |a - c| / max(|a|, |c|, 1e-8) for analytic a and central difference c.
double relative_error(double analytic, double numeric);

// Compares backward() against central differences of `f` over `params`.
// `f` must rebuild the graph on every call.
GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<Tensor<double>>& params,
                           const GradCheckOptions& options = {});

}  // namespace duo
