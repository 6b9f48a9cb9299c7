// duoformer command-line entry point.
//
// Exit codes: 0 success, 2 configuration, 3 I/O or format, 4 numeric failure.

#include <Eigen/Core>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "duoformer/ablation.hpp"
#include "duoformer/backbone.hpp"
#include "duoformer/config.hpp"
#include "duoformer/data.hpp"
#include "duoformer/errors.hpp"
#include "duoformer/model.hpp"
#include "duoformer/serialize.hpp"
#include "duoformer/tokenizer.hpp"
#include "duoformer/trainer.hpp"
#include "duoformer/verify.hpp"

namespace fs = std::filesystem;
using namespace duo;

namespace {

enum Exit { ok = 0, internal = 1, config_error = 2, io_error = 3, numeric_error = 4 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

// Empty path selects the built-in toy configuration.
RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{DuoFormerConfig::toy(), TrainConfig{}};
  return load_run_config(path);
}

void apply_seed(RunConfig& run, const std::optional<std::uint64_t>& seed) {
  if (!seed) return;
  run.model.seed = *seed;
  run.train.seed = *seed;
}

void check_geometry(const DuoFormerConfig& model, const Dataset& data) {
  if (data.image_size() != model.input_size) {
    throw ConfigError("dataset images are " + std::to_string(data.image_size()) +
                      " px but the model expects input_size=" + std::to_string(model.input_size));
  }
  if (data.num_classes != model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) +
                      " classes but the model expects num_classes=" + std::to_string(model.num_classes));
  }
}

template <typename S>
ModelInputs<S> load_inputs(const Dataset& data, const std::string& pyramid_path, int input_size) {
  auto inputs = image_inputs<S>(data);
  if (!pyramid_path.empty()) {
    auto pyramid = load_pyramid<S>(pyramid_path);
    if (pyramid.batch() != data.size()) {
      throw ConfigError("pyramid holds " + std::to_string(pyramid.batch()) + " samples, dataset " +
                        std::to_string(data.size()));
    }
    if (pyramid.input_size != input_size) {
      throw ConfigError("pyramid was computed at input_size=" + std::to_string(pyramid.input_size) +
                        ", model expects " + std::to_string(input_size));
    }
    inputs.pyramid = std::move(pyramid);
  }
  return inputs;
}

void print_eval(const EvalResult& r, const Dataset& data) {
  std::printf("test balanced accuracy: %.6f\n", r.balanced_accuracy);
  std::printf("test accuracy: %.6f\n", r.accuracy);
  for (std::size_t k = 0; k < r.recalls.size(); ++k) {
    const std::string name = k < data.class_names.size() ? data.class_names[k] : "class" + std::to_string(k);
    std::printf("  recall[%zu] %-20s %.6f\n", k, name.c_str(), r.recalls[k]);
  }
}

// ---- gen-synthetic ---------------------------------------------------------

struct GenArgs {
  std::string out;
  SyntheticOptions options;
};

int run_gen(const GenArgs& a) {
  const auto data = gen_synthetic(a.options);
  save_dataset(a.out, data, "seed=" + std::to_string(a.options.seed) + "\n");
  std::printf("wrote %lld samples (%d classes, %d px) to %s\n", static_cast<long long>(data.size()),
              data.num_classes, data.image_size(), a.out.c_str());
  return ok;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, pyramid;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

template <typename S>
int train_as(const RunConfig& run, const Dataset& data, const TrainArgs& a) {
  DuoFormer<S> model(run.model);
  const auto inputs = load_inputs<S>(data, a.pyramid, run.model.input_size);
  TrainOptions options;
  options.out_dir = fs::path(a.out);
  if (!a.quiet) {
    options.on_epoch = [](const EpochRecord& e) {
      std::fprintf(stderr, "epoch %3d  loss %.4f  train_acc %.4f  val_bacc %.4f  lr %.3e  %.1fs\n", e.epoch,
                   e.train_loss, e.train_acc, e.val_balanced_acc, e.lr, e.seconds);
      return true;
    };
  }
  const auto record = train(model, inputs, data, run.train, options);
  std::printf("best epoch %d (val balanced accuracy %.6f)%s\n", record.best_epoch, record.best_val_balanced_acc,
              record.early_stopped ? ", stopped early" : "");
  print_eval(record.test, data);
  return ok;
}

int run_train(const TrainArgs& a) {
  auto run = load_config(a.config);
  apply_seed(run, a.seed);
  run.model.validate();
  run.train.validate();
  const auto data = load_dataset(a.data);
  check_geometry(run.model, data);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.txt", serialize_run_config(run));
  return run.model.dtype == DType::f64 ? train_as<double>(run, data, a) : train_as<float>(run, data, a);
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, out, pyramid;
  int batch_size = 64;
};

template <typename S>
int eval_as(const io::Container& container, const EvalArgs& a) {
  auto model = DuoFormer<S>::from_container(container);
  const auto data = load_dataset(a.data);
  check_geometry(model.config(), data);
  const auto inputs = load_inputs<S>(data, a.pyramid, model.config().input_size);
  const auto result = evaluate(model, inputs, data.labels, data.indices(Split::test), a.batch_size);
  print_eval(result, data);
  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() / "metrics.json" : fs::path(a.out);
  auto j = to_json(result);
  j["checkpoint"] = a.checkpoint;
  write_text(out, j.dump(2) + "\n");
  return ok;
}

int run_eval(const EvalArgs& a) {
  io::Container container;
  DType dtype;
  container = io::load_container(a.checkpoint);
  try {
    const auto* text = container.find("config");
    if (!text) throw FormatError("checkpoint has no 'config' entry");
    dtype = parse_model_config(io::to_text(*text)).dtype;
  } catch (const Error& e) {
    throw FormatError(a.checkpoint + ": " + e.what());
  }
  return dtype == DType::f64 ? eval_as<double>(container, a) : eval_as<float>(container, a);
}

// ---- gradcheck -------------------------------------------------------------

struct GradArgs {
  std::string config;
  ModelGradCheckOptions options;
};

int run_gradcheck(GradArgs a) {
  const auto run = load_config(a.config);
  run.model.validate();
  const auto report = gradcheck_model(run.model, a.options);
  std::fputs(format_report(report).c_str(), stdout);
  return report.passed() ? ok : numeric_error;
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string suite, data, out, config;
  AblationOptions options;
};

int run_ablate(const AblateArgs& a) {
  const auto suite = parse_suite(a.suite);
  const auto run = load_config(a.config);
  run.model.validate();
  run.train.validate();
  const auto data = load_dataset(a.data);
  auto options = a.options;
  options.progress = [](const AblationRow& r) {
    std::fprintf(stderr, "%-16s seed %llu  val_bacc %.4f  test_bacc %.4f  %d epochs  %.1fs\n", r.id.c_str(),
                 static_cast<unsigned long long>(r.seed), r.val_balanced_acc, r.test_balanced_acc, r.epochs,
                 r.seconds);
  };
  const auto report = run_ablation(suite, data, run, options);
  const auto table = format_table(report);
  std::fputs(table.c_str(), stdout);
  fs::create_directories(a.out);
  const auto stem = fs::path(a.out) / ("ablation_" + a.suite);
  write_text(stem.string() + ".txt", table);
  write_text(stem.string() + ".json", to_json(report).dump(2) + "\n");
  return ok;
}

// ---- tokenize --------------------------------------------------------------

struct TokenizeArgs {
  std::string image, config, out, pyramid;
  std::optional<std::uint64_t> seed;
};

template <typename S>
int tokenize_as(const DuoFormerConfig& config, const TokenizeArgs& a) {
  DuoFormer<S> model(config);
  FeaturePyramid<S> pyramid;
  if (!a.pyramid.empty()) {
    pyramid = load_pyramid<S>(a.pyramid);
    if (pyramid.batch() != 1) throw ConfigError("tokenize expects a single-sample pyramid");
  } else {
    auto image = io::to_tensor<S>(io::load_record(a.image));
    if (image.rank() == 3) image = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
    if (image.rank() != 4 || image.dim(0) != 1) {
      throw FormatError(a.image + ": expected an image of shape [H, W, 3] or [1, H, W, 3], got " +
                        to_string(image.shape()));
    }
    pyramid = model.backbone(image);
  }
  FeaturePyramid<S> projected;
  {
    NoGradGuard no_grad;
    projected = project(select_stages(pyramid, config.stages), model.params(), config.stages);
  }
  const auto tokens = tokenize(projected, config.patch_count);
  const auto& t = tokens.tokens;
  const auto flat = reshape(t, {t.dim(1), t.dim(2), t.dim(3)});
  io::save_record(a.out, io::to_record(flat));
  auto sidecar = fs::path(a.out);
  sidecar.replace_extension(".layout.txt");
  write_text(sidecar, describe_layout(tokens.layout, false));
  std::printf("wrote tokens %s to %s (layout in %s)\n", to_string(flat.shape()).c_str(), a.out.c_str(),
              sidecar.c_str());
  return ok;
}

int run_tokenize(const TokenizeArgs& a) {
  if (a.image.empty() == a.pyramid.empty()) throw ConfigError("tokenize needs exactly one of --image, --pyramid");
  auto run = load_config(a.config);
  apply_seed(run, a.seed);
  run.model.validate();
  return run.model.dtype == DType::f64 ? tokenize_as<double>(run.model, a) : tokenize_as<float>(run.model, a);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DuoFormer: multi-scale hierarchical vision transformer"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "Single-threaded execution for bitwise reproducibility");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Generate the synthetic multi-scale dataset");
  gen_cmd->add_option("--out", gen.out, "Output dataset directory")->required();
  gen_cmd->add_option("--classes", gen.options.classes, "Number of classes (2, 4 or 6)");
  gen_cmd->add_option("--samples", gen.options.samples, "Number of samples");
  gen_cmd->add_option("--size", gen.options.size, "Image side in pixels (>= 32)");
  gen_cmd->add_option("--seed", gen.options.seed, "Generator seed");
  gen_cmd->add_option("--val-fraction", gen.options.val_fraction, "Validation fraction per class");
  gen_cmd->add_option("--test-fraction", gen.options.test_fraction, "Test fraction per class");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write run.jsonl, best.dfc, last.dfc");
  train_cmd->add_option("--config", tr.config, "key=value run config (empty: toy)");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--pyramid", tr.pyramid, "Precomputed feature pyramid (.dfc) replacing the backbone");
  train_cmd->add_option("--seed", tr.seed, "Override model and training seeds (default: config values)");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint (.dfc)")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--out", ev.out, "metrics.json path (empty: next to the checkpoint)");
  eval_cmd->add_option("--pyramid", ev.pyramid, "Precomputed feature pyramid (.dfc) replacing the backbone");
  eval_cmd->add_option("--batch-size", ev.batch_size, "Evaluation batch size");

  GradArgs gc;
  gc.options.check.samples_per_param = 32;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  grad_cmd->add_option("--config", gc.config, "key=value run config (empty: toy)");
  grad_cmd->add_option("--eps", gc.options.check.step, "Central-difference step");
  grad_cmd->add_option("--samples", gc.options.check.samples_per_param,
                       "Coordinates sampled per parameter tensor (0: all)");
  grad_cmd->add_option("--jitter", gc.options.jitter, "Std of the perturbation applied to every parameter");
  grad_cmd->add_option("--batch", gc.options.batch, "Batch size of the random probe");
  grad_cmd->add_option("--seed", gc.options.check.seed, "Seed for jitter, probe and coordinate sampling");
  grad_cmd->add_flag("--train-mode", gc.options.training, "BatchNorm in batch-statistics mode");
  grad_cmd->add_option("--analytic-scale", gc.options.check.analytic_scale, "Scale applied to analytic gradients")
      ->group("");

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation suite over seeds");
  ablate_cmd->add_option("--suite", ab.suite, "attention, scale-token, stages or heads-layers")->required();
  ablate_cmd->add_option("--data", ab.data, "Dataset directory")->required();
  ablate_cmd->add_option("--out", ab.out, "Report directory")->required();
  ablate_cmd->add_option("--config", ab.config, "Base key=value run config (empty: toy)");
  ablate_cmd->add_option("--seeds", ab.options.seeds, "Seeds shared by every variant");
  ablate_cmd->add_option("--jobs", ab.options.jobs, "Concurrent independent runs");

  TokenizeArgs tk;
  auto* tok_cmd = app.add_subcommand("tokenize", "Write the multi-scale tokens [S, N, D] of one image");
  tok_cmd->add_option("--image", tk.image, "Image DFT1 tensor [H, W, 3] or [1, H, W, 3]");
  tok_cmd->add_option("--config", tk.config, "key=value run config (empty: toy)");
  tok_cmd->add_option("--out", tk.out, "Output token tensor (.dft)")->required();
  tok_cmd->add_option("--pyramid", tk.pyramid, "Single-sample feature pyramid (.dfc) instead of --image");
  tok_cmd->add_option("--seed", tk.seed, "Override the model seed (default: config value)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return config_error;
  }

  if (deterministic) {
    Eigen::setNbThreads(1);
    ab.options.jobs = 1;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*grad_cmd) return run_gradcheck(gc);
    if (*ablate_cmd) return run_ablate(ab);
    if (*tok_cmd) return run_tokenize(tk);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return config_error;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return config_error;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return io_error;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return io_error;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return numeric_error;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return internal;
  }
  return internal;
}
