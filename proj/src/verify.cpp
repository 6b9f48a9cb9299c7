#include "duoformer/verify.hpp"

#include <cstdio>
#include <map>

#include "duoformer/model.hpp"

namespace duo {

ModelGradCheckReport gradcheck_model(const DuoFormerConfig& config,
                                     const ModelGradCheckOptions& options) {
  DuoFormerConfig c = config;
  c.dtype = DType::f64;
  DuoFormer<double> model(c);
  model.set_training(options.training);

  Rng rng(options.check.seed ^ 0x5eedULL);
  const auto names = model.params().trainable_names();
  const auto params = model.params().trainable();
  for (const auto& e : model.params().entries()) {
    auto& v = e.tensor.node()->value;
    const bool variance = e.name.size() > 12 && e.name.ends_with("running_var");
    for (Index i = 0; i < v.size(); ++i) {
      const double delta = options.jitter * rng.normal();
      v[i] += variance ? std::abs(delta) : delta;
    }
  }
  const Index h = c.input_size;
  Buffer<double> pixels(options.batch * h * h * 3);
  for (Index i = 0; i < pixels.size(); ++i) pixels[i] = rng.uniform();
  const Tensor<double> images({options.batch, h, h, 3}, std::move(pixels));
  std::vector<std::int64_t> labels;
  for (int b = 0; b < options.batch; ++b) labels.push_back(static_cast<std::int64_t>(rng.below(c.num_classes)));

  const auto result = grad_check([&] { return cross_entropy(model.forward(images), labels); }, params,
                                 options.check);

  ModelGradCheckReport report;
  report.tolerance = options.tolerance;
  report.max_relative_error = result.max_relative_error;
  report.checked = result.coordinates;
  report.skipped_kinks = result.skipped_kinks;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto group = parameter_group(names[i]);
    if (!slot.count(group)) {
      slot[group] = report.groups.size();
      report.groups.push_back({group, 0, 0, 0.0, ""});
    }
    auto& g = report.groups[slot[group]];
    ++g.tensors;
    const Index n = params[i].numel();
    const int sampled = options.check.samples_per_param;
    g.coordinates += static_cast<int>(sampled > 0 && sampled < n ? sampled : n);
    if (g.worst_parameter.empty() || result.per_param[i] > g.max_relative_error) {
      g.max_relative_error = result.per_param[i];
      g.worst_parameter = names[i];
    }
  }
  return report;
}

std::string format_report(const ModelGradCheckReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %8s %8s %14s  %s\n", "group", "tensors", "coords",
                "max_rel_error", "status");
  out += line;
  for (const auto& g : report.groups) {
    std::snprintf(line, sizeof line, "%-16s %8d %8d %14.3e  %s  (worst: %s)\n", g.group.c_str(),
                  g.tensors, g.coordinates, g.max_relative_error,
                  g.max_relative_error < report.tolerance ? "ok" : "FAIL", g.worst_parameter.c_str());
    out += line;
  }
  std::snprintf(line, sizeof line, "checked %d coordinates, skipped %d at relu/max-pool kinks\n",
                report.checked, report.skipped_kinks);
  out += line;
  std::snprintf(line, sizeof line, "overall max relative error %.3e (tolerance %.1e): %s\n",
                report.max_relative_error, report.tolerance, report.passed() ? "pass" : "fail");
  out += line;
  return out;
}

}  // namespace duo
