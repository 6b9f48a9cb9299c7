#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "duoformer/config.hpp"
#include "duoformer/data.hpp"
#include "duoformer/model.hpp"
#include "json.hpp"

namespace duo {

// ---- optimizer --------------------------------------------------------------

template <typename S>
struct AdamState {
  std::vector<Buffer<S>> m;
  std::vector<Buffer<S>> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update without weight decay. Empty grads count as
// zero. Throws ContractError when a grad's size differs from its parameter.
template <typename S>
void adam_step(std::vector<Tensor<S>>& params, const std::vector<Buffer<S>>& grads,
               AdamState<S>& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

template <typename S>
class Adam {
 public:
  Adam(std::vector<Tensor<S>> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Uses each parameter's accumulated gradient, then clears it.
  void step(double lr);
  const AdamState<S>& state() const { return state_; }

 private:
  std::vector<Tensor<S>> params_;
  AdamState<S> state_;
  double beta1_, beta2_, eps_;
};

// ---- schedule and metrics ---------------------------------------------------

// Index of the step that returns exactly max_lr.
std::int64_t onecycle_peak_step(std::int64_t total_steps, const TrainConfig& config);
// Cosine warmup from max_lr/div_factor to max_lr, then cosine anneal to
// max_lr/final_div_factor. Throws ContractError unless 0 ≤ step < total_steps.
double onecycle_lr(std::int64_t step, std::int64_t total_steps, const TrainConfig& config);

// confusion[label][prediction].
std::vector<std::vector<std::int64_t>> confusion_matrix(const std::vector<std::int64_t>& predictions,
                                                        const std::vector<std::int64_t>& labels,
                                                        int num_classes);
// Recall per class; NaN for classes absent from labels.
std::vector<double> per_class_recall(const std::vector<std::int64_t>& predictions,
                                     const std::vector<std::int64_t>& labels, int num_classes);
// Unweighted mean of per-class recall over classes present in labels.
double balanced_accuracy(const std::vector<std::int64_t>& predictions,
                         const std::vector<std::int64_t>& labels, int num_classes);

// Stops once `patience` consecutive epochs fail to strictly improve the best
// score.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Records the score of the next epoch; returns true if it is a new best.
  bool update(double score);
  bool should_stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  double best_score() const { return best_score_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_score_ = 0.0;
};

// ---- training ---------------------------------------------------------------

// Model inputs for every sample: raw images [n, H, W, 3], or a precomputed
// pyramid whose stages have batch extent n.
template <typename S>
struct ModelInputs {
  Tensor<S> images;
  std::optional<FeaturePyramid<S>> pyramid;

  Index size() const;
  Tensor<S> logits(const DuoFormer<S>& model, const std::vector<Index>& rows) const;
};

template <typename S>
ModelInputs<S> image_inputs(const Dataset& dataset);

struct EvalResult {
  double balanced_accuracy = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<double> recalls;
  std::vector<std::int64_t> predictions;
};

// split, balanced_accuracy, accuracy, loss, per_class_recall (null for
// classes absent from the split).
nlohmann::json to_json(const EvalResult& result);

// Eval-mode pass over `rows` in mini-batches; restores the previous mode.
template <typename S>
EvalResult evaluate(DuoFormer<S>& model, const ModelInputs<S>& inputs,
                    const std::vector<std::int64_t>& labels, const std::vector<Index>& rows,
                    int batch_size);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;  // running accuracy of train-mode predictions
  double val_balanced_acc = 0.0;
  double lr = 0.0;  // rate used by the epoch's last step
  double seconds = 0.0;

  bool same_metrics(const EpochRecord& other) const;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_balanced_acc = 0.0;
  bool early_stopped = false;
  EvalResult test;
};

struct TrainOptions {
  // When set, run.jsonl, best.dfc, last.dfc and metrics.json are written here.
  std::optional<std::filesystem::path> out_dir;
  // Called after every epoch; returning false ends training.
  std::function<bool(const EpochRecord&)> on_epoch;
};

// Adam + per-step OneCycle over shuffled mini-batches, validation balanced
// accuracy each epoch, early stopping, best weights restored before the test
// evaluation. Throws NumericError naming the epoch and batch on a non-finite
// loss.
template <typename S>
RunRecord train(DuoFormer<S>& model, const ModelInputs<S>& inputs, const Dataset& dataset,
                const TrainConfig& config, const TrainOptions& options = {});

// Forward, backward and one Adam step on `rows`; returns the loss before the
// step.
template <typename S>
double train_step(DuoFormer<S>& model, Adam<S>& optimizer, const ModelInputs<S>& inputs,
                  const std::vector<std::int64_t>& labels, const std::vector<Index>& rows, double lr);

}  // namespace duo
