#pragma once

#include <string>
#include <vector>

#include "duoformer/autograd.hpp"
#include "duoformer/config.hpp"

namespace duo {

struct GradCheckGroup {
  std::string group;
  int tensors = 0;
  int coordinates = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

struct ModelGradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_relative_error = 0.0;
  double tolerance = 1e-4;
  int checked = 0;
  int skipped_kinks = 0;

  bool passed() const { return max_relative_error < tolerance; }
};

struct ModelGradCheckOptions {
  GradCheckOptions check;
  int batch = 2;
  // Standard deviation of the perturbation applied to every parameter before
  // checking, so the check runs at a generic point rather than at the
  // zero-bias / unit-gamma initialization.
  double jitter = 0.15;
  // Eval mode evaluates BatchNorm with (jittered) running statistics; train
  // mode uses batch statistics.
  bool training = false;
  double tolerance = 1e-4;
};

// Builds the model in f64 (config.dtype is ignored), evaluates the
// cross-entropy of random images and labels, and compares every trainable
// parameter's gradient against central differences.
ModelGradCheckReport gradcheck_model(const DuoFormerConfig& config,
                                     const ModelGradCheckOptions& options = {});

std::string format_report(const ModelGradCheckReport& report);

}  // namespace duo
