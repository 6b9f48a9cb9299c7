#include "duoformer/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "duoformer/errors.hpp"
#include "duoformer/model.hpp"
#include "duoformer/trainer.hpp"

namespace duo {

std::string to_string(Suite suite) {
  switch (suite) {
    case Suite::attention: return "attention";
    case Suite::scale_token: return "scale-token";
    case Suite::stages: return "stages";
    case Suite::heads_layers: return "heads-layers";
  }
  return "?";
}

Suite parse_suite(const std::string& text) {
  for (auto s : {Suite::attention, Suite::scale_token, Suite::stages, Suite::heads_layers}) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown suite '" + text + "' (attention, scale-token, stages, heads-layers)");
}

namespace {

void add_if_valid(std::vector<AblationVariant>& out, std::vector<SkippedVariant>* skipped,
                  const std::string& id, const DuoFormerConfig& config) {
  try {
    config.validate();
    out.push_back({id, config});
  } catch (const ConfigError& e) {
    if (skipped) skipped->push_back({id, e.what()});
  }
}

}  // namespace

std::vector<AblationVariant> suite_variants(Suite suite, const DuoFormerConfig& base,
                                            std::vector<SkippedVariant>* skipped) {
  std::vector<AblationVariant> out;
  switch (suite) {
    case Suite::attention: {
      auto scale = base;
      scale.attention_mode = AttentionMode::scale_only;
      scale.scale_token_mode = ScaleTokenMode::fused;
      scale.readout = Readout::scale_attn_only_fc;
      add_if_valid(out, skipped, "scale_only", scale);
      auto patch = base;
      patch.attention_mode = AttentionMode::patch_only;
      patch.readout = Readout::scale_token_patch_attn;
      patch.baseline_layers = base.layers;
      add_if_valid(out, skipped, "patch_only", patch);
      auto duo = base;
      duo.attention_mode = AttentionMode::duo;
      duo.scale_token_mode = ScaleTokenMode::fused;
      duo.readout = Readout::scale_token_patch_attn;
      add_if_valid(out, skipped, "duo", duo);
      break;
    }
    case Suite::scale_token: {
      auto c = base;
      c.attention_mode = AttentionMode::duo;
      c.scale_token_mode = ScaleTokenMode::none;
      c.readout = Readout::first_token;
      add_if_valid(out, skipped, "first_token", c);
      c.readout = Readout::avg_tokens;
      add_if_valid(out, skipped, "avg_tokens", c);
      c.readout = Readout::scale_token_patch_attn;
      c.scale_token_mode = ScaleTokenMode::learnable;
      add_if_valid(out, skipped, "learnable", c);
      c.scale_token_mode = ScaleTokenMode::fused;
      add_if_valid(out, skipped, "fused", c);
      break;
    }
    case Suite::stages: {
      for (int mask = 1; mask < 16; ++mask) {
        auto c = base;
        c.stages.clear();
        std::string id = "stages_";
        for (int i = 0; i < 4; ++i) {
          if (mask & (1 << i)) {
            c.stages.push_back(i);
            id += std::to_string(i);
          }
        }
        add_if_valid(out, skipped, id, c);
      }
      break;
    }
    case Suite::heads_layers: {
      for (int layers : {2, 4, 6}) {
        for (int heads : {2, 4, 8}) {
          auto c = base;
          c.layers = layers;
          c.heads = heads;
          add_if_valid(out, skipped, "L" + std::to_string(layers) + "_h" + std::to_string(heads), c);
        }
      }
      break;
    }
  }
  return out;
}

const AblationSummary& AblationReport::summary(const std::string& id) const {
  for (const auto& s : summaries) {
    if (s.id == id) return s;
  }
  throw ContractError("no ablation variant " + id);
}

namespace {

template <typename S>
AblationRow run_one(const AblationVariant& variant, std::uint64_t seed, const Dataset& dataset,
                    const TrainConfig& base_train) {
  auto model_config = variant.model;
  model_config.seed = seed;
  auto train_config = base_train;
  train_config.seed = seed;
  const auto started = std::chrono::steady_clock::now();
  DuoFormer<S> model(model_config);
  const auto record = train(model, image_inputs<S>(dataset), dataset, train_config);
  AblationRow row;
  row.id = variant.id;
  row.seed = seed;
  row.val_balanced_acc = record.best_val_balanced_acc;
  row.test_balanced_acc = record.test.balanced_accuracy;
  row.params = model.parameter_count().total();
  row.epochs = static_cast<int>(record.epochs.size());
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return row;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
}

}  // namespace

AblationReport run_ablation(Suite suite, const Dataset& dataset, const RunConfig& base,
                            const AblationOptions& options) {
  if (options.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (dataset.image_size() != base.model.input_size) {
    throw ConfigError("dataset image size " + std::to_string(dataset.image_size()) +
                      " does not match input_size " + std::to_string(base.model.input_size));
  }
  AblationReport report;
  report.suite = suite;
  auto base_model = base.model;
  base_model.num_classes = dataset.num_classes;
  const auto variants = suite_variants(suite, base_model, &report.skipped);
  const std::size_t per_variant = options.seeds.size();
  const std::size_t total = variants.size() * per_variant;
  std::vector<AblationRow> rows(total);
  std::vector<std::exception_ptr> failures(total);
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < total; k = next++) {
      const auto& v = variants[k / per_variant];
      const auto seed = options.seeds[k % per_variant];
      try {
        rows[k] = v.model.dtype == DType::f64 ? run_one<double>(v, seed, dataset, base.train)
                                              : run_one<float>(v, seed, dataset, base.train);
        if (options.progress) {
          std::lock_guard<std::mutex> lock(progress_mutex);
          options.progress(rows[k]);
        }
      } catch (...) {
        failures[k] = std::current_exception();
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(total)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    std::vector<double> val, test;
    AblationSummary summary;
    summary.id = variants[vi].id;
    for (std::size_t si = 0; si < per_variant; ++si) {
      const auto& row = rows[vi * per_variant + si];
      report.rows.push_back(row);
      val.push_back(row.val_balanced_acc);
      test.push_back(row.test_balanced_acc);
      summary.params = row.params;
      summary.seconds += row.seconds;
    }
    mean_std(val, summary.val_mean, summary.val_std);
    mean_std(test, summary.test_mean, summary.test_std);
    report.summaries.push_back(summary);
  }
  return report;
}

std::string format_table(const AblationReport& report) {
  std::string out = "suite: " + to_string(report.suite) + "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-18s %-18s %10s %10s\n", "config", "val_bacc",
                "test_bacc", "params", "seconds");
  out += line;
  for (const auto& s : report.summaries) {
    char val[32], test[32];
    std::snprintf(val, sizeof val, "%.4f +- %.4f", s.val_mean, s.val_std);
    std::snprintf(test, sizeof test, "%.4f +- %.4f", s.test_mean, s.test_std);
    std::snprintf(line, sizeof line, "%-16s %-18s %-18s %10lld %10.1f\n", s.id.c_str(), val, test,
                  static_cast<long long>(s.params), s.seconds);
    out += line;
  }
  for (const auto& s : report.skipped) out += "skipped " + s.id + ": " + s.reason + "\n";
  return out;
}

nlohmann::json to_json(const AblationReport& report) {
  nlohmann::json j;
  j["suite"] = to_string(report.suite);
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    j["rows"].push_back({{"config", r.id},
                         {"seed", r.seed},
                         {"val_balanced_acc", r.val_balanced_acc},
                         {"test_balanced_acc", r.test_balanced_acc},
                         {"params", r.params},
                         {"epochs", r.epochs},
                         {"seconds", r.seconds}});
  }
  j["summary"] = nlohmann::json::array();
  for (const auto& s : report.summaries) {
    j["summary"].push_back({{"config", s.id},
                            {"val_mean", s.val_mean},
                            {"val_std", s.val_std},
                            {"test_mean", s.test_mean},
                            {"test_std", s.test_std},
                            {"params", s.params},
                            {"seconds", s.seconds}});
  }
  j["skipped"] = nlohmann::json::array();
  for (const auto& s : report.skipped) j["skipped"].push_back({{"config", s.id}, {"reason", s.reason}});
  return j;
}

}  // namespace duo
