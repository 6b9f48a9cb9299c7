#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "duoformer/config.hpp"
#include "duoformer/data.hpp"
#include "json.hpp"

namespace duo {

enum class Suite { attention, scale_token, stages, heads_layers };

std::string to_string(Suite suite);
// Accepts attention, scale-token, stages, heads-layers.
Suite parse_suite(const std::string& text);

struct AblationVariant {
  std::string id;
  DuoFormerConfig model;
};

struct SkippedVariant {
  std::string id;
  std::string reason;
};

// Config grid of a suite around `base`:
//   attention     scale_only, patch_only (baseline_layers = base.layers), duo
//   scale-token   first_token, avg_tokens, learnable, fused
//   stages        every nonempty subset of {0,1,2,3} that validates
//   heads-layers  layers {2,4,6} × heads {2,4,8}
// Invalid grid points land in `skipped` with the validation message.
std::vector<AblationVariant> suite_variants(Suite suite, const DuoFormerConfig& base,
                                            std::vector<SkippedVariant>* skipped = nullptr);

struct AblationRow {
  std::string id;
  std::uint64_t seed = 0;
  double val_balanced_acc = 0.0;
  double test_balanced_acc = 0.0;
  std::int64_t params = 0;
  int epochs = 0;
  double seconds = 0.0;
};

struct AblationSummary {
  std::string id;
  double val_mean = 0.0, val_std = 0.0;
  double test_mean = 0.0, test_std = 0.0;
  std::int64_t params = 0;
  double seconds = 0.0;
};

struct AblationReport {
  Suite suite = Suite::attention;
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summaries;
  std::vector<SkippedVariant> skipped;

  const AblationSummary& summary(const std::string& id) const;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  // Independent runs executed concurrently; 1 runs them in order. Results do
  // not depend on this.
  int jobs = 1;
  // Called after each finished run.
  std::function<void(const AblationRow&)> progress;
};

// Trains every variant once per seed (model and train seeds both set to the
// seed) and aggregates mean ± sample standard deviation per variant.
AblationReport run_ablation(Suite suite, const Dataset& dataset, const RunConfig& base,
                            const AblationOptions& options = {});

std::string format_table(const AblationReport& report);
nlohmann::json to_json(const AblationReport& report);

}  // namespace duo
