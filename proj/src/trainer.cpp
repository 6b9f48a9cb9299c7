#include "duoformer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "duoformer/autograd.hpp"
#include "duoformer/errors.hpp"
#include "json.hpp"

namespace duo {

template <typename S>
void adam_step(std::vector<Tensor<S>>& params, const std::vector<Buffer<S>>& grads,
               AdamState<S>& state, double lr, double beta1, double beta2, double eps) {
  if (grads.size() != params.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Buffer<S>::Zero(p.numel()));
      state.v.push_back(Buffer<S>::Zero(p.numel()));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: state does not match parameters");
  ++state.step;
  const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
  const S c1 = static_cast<S>(1.0 - std::pow(beta1, static_cast<double>(state.step)));
  const S c2 = static_cast<S>(1.0 - std::pow(beta2, static_cast<double>(state.step)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    if (g.size() == 0) {
      m *= b1;
      v *= b2;
    } else {
      if (g.size() != params[i].numel()) {
        throw ContractError("adam_step: gradient " + std::to_string(i) + " has " +
                            std::to_string(g.size()) + " entries, parameter has " +
                            std::to_string(params[i].numel()));
      }
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g.square();
    }
    params[i].mutable_data() -= static_cast<S>(lr) * (m / c1) / ((v / c2).sqrt() + static_cast<S>(eps));
  }
}

template <typename S>
void Adam<S>::step(double lr) {
  std::vector<Buffer<S>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(p.has_grad() ? p.grad() : Buffer<S>());
  adam_step(params_, grads, state_, lr, beta1_, beta2_, eps_);
  for (auto& p : params_) p.zero_grad();
}

std::int64_t onecycle_peak_step(std::int64_t total_steps, const TrainConfig& config) {
  const auto peak = static_cast<std::int64_t>(std::llround(config.pct_start * static_cast<double>(total_steps))) - 1;
  return std::clamp<std::int64_t>(peak, 0, std::max<std::int64_t>(total_steps - 1, 0));
}

namespace {

// Cosine interpolation from a (p = 0) to b (p = 1).
double cosine(double a, double b, double p) { return b + (a - b) * 0.5 * (1.0 + std::cos(std::numbers::pi * p)); }

}  // namespace

double onecycle_lr(std::int64_t step, std::int64_t total_steps, const TrainConfig& config) {
  if (total_steps <= 0 || step < 0 || step >= total_steps) {
    throw ContractError("onecycle_lr: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + ")");
  }
  const auto peak = onecycle_peak_step(total_steps, config);
  if (step == peak) return config.max_lr;
  const double initial = config.max_lr / config.div_factor;
  const double final_lr = config.max_lr / config.final_div_factor;
  if (step < peak) {
    return cosine(initial, config.max_lr, static_cast<double>(step) / static_cast<double>(peak));
  }
  const auto span = total_steps - 1 - peak;
  return cosine(config.max_lr, final_lr, static_cast<double>(step - peak) / static_cast<double>(span));
}

std::vector<std::vector<std::int64_t>> confusion_matrix(const std::vector<std::int64_t>& predictions,
                                                        const std::vector<std::int64_t>& labels,
                                                        int num_classes) {
  if (labels.empty()) throw ContractError("confusion matrix of an empty set");
  if (predictions.size() != labels.size()) throw ContractError("predictions and labels differ in length");
  std::vector<std::vector<std::int64_t>> m(num_classes, std::vector<std::int64_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes || predictions[i] < 0 || predictions[i] >= num_classes) {
      throw ContractError("class index out of range at position " + std::to_string(i));
    }
    ++m[labels[i]][predictions[i]];
  }
  return m;
}

std::vector<double> per_class_recall(const std::vector<std::int64_t>& predictions,
                                     const std::vector<std::int64_t>& labels, int num_classes) {
  const auto m = confusion_matrix(predictions, labels, num_classes);
  std::vector<double> recall(num_classes, std::numeric_limits<double>::quiet_NaN());
  for (int k = 0; k < num_classes; ++k) {
    std::int64_t row = 0;
    for (auto c : m[k]) row += c;
    if (row > 0) recall[k] = static_cast<double>(m[k][k]) / static_cast<double>(row);
  }
  return recall;
}

double balanced_accuracy(const std::vector<std::int64_t>& predictions,
                         const std::vector<std::int64_t>& labels, int num_classes) {
  const auto recall = per_class_recall(predictions, labels, num_classes);
  double total = 0.0;
  int present = 0;
  for (double r : recall) {
    if (!std::isnan(r)) {
      total += r;
      ++present;
    }
  }
  return total / present;
}

bool EarlyStopping::update(double score) {
  ++epoch_;
  if (best_epoch_ == 0 || score > best_score_) {
    best_score_ = score;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

template <typename S>
Index ModelInputs<S>::size() const {
  return pyramid ? pyramid->batch() : images.dim(0);
}

template <typename S>
Tensor<S> ModelInputs<S>::logits(const DuoFormer<S>& model, const std::vector<Index>& rows) const {
  if (pyramid) return model.forward(select_batch(*pyramid, rows));
  return model.forward(index_select(images, 0, rows));
}

template <typename S>
ModelInputs<S> image_inputs(const Dataset& dataset) {
  ModelInputs<S> in;
  in.images = Tensor<S>(dataset.images.shape(), dataset.images.data().template cast<S>());
  return in;
}

template <typename S>
EvalResult evaluate(DuoFormer<S>& model, const ModelInputs<S>& inputs,
                    const std::vector<std::int64_t>& labels, const std::vector<Index>& rows,
                    int batch_size) {
  if (rows.empty()) throw ContractError("evaluate: empty split");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard no_grad;
  EvalResult out;
  std::vector<std::int64_t> truth;
  double loss = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const std::vector<Index> batch(rows.begin() + start,
                                   rows.begin() + std::min(rows.size(), start + batch_size));
    std::vector<std::int64_t> y;
    for (auto r : batch) y.push_back(labels[r]);
    const auto logits = inputs.logits(model, batch);
    loss += static_cast<double>(cross_entropy(logits, y).item()) * static_cast<double>(batch.size());
    const Index c = logits.dim(1);
    for (Index i = 0; i < logits.dim(0); ++i) {
      Index best = 0;
      for (Index k = 1; k < c; ++k) {
        if (logits.data()[i * c + k] > logits.data()[i * c + best]) best = k;
      }
      out.predictions.push_back(best);
    }
    truth.insert(truth.end(), y.begin(), y.end());
  }
  model.set_training(was_training);
  const int classes = model.config().num_classes;
  out.loss = loss / static_cast<double>(rows.size());
  out.recalls = per_class_recall(out.predictions, truth, classes);
  out.balanced_accuracy = balanced_accuracy(out.predictions, truth, classes);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += out.predictions[i] == truth[i];
  out.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  return out;
}

bool EpochRecord::same_metrics(const EpochRecord& o) const {
  return epoch == o.epoch && train_loss == o.train_loss && train_acc == o.train_acc &&
         val_balanced_acc == o.val_balanced_acc && lr == o.lr;
}

namespace {

// Mini-batches of a shuffled row list; a trailing batch of one sample is merged
// into its predecessor because batch statistics need two values per channel.
std::vector<std::vector<Index>> make_batches(const std::vector<Index>& rows, int batch_size) {
  std::vector<std::vector<Index>> batches;
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    batches.emplace_back(rows.begin() + start, rows.begin() + std::min(rows.size(), start + batch_size));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

nlohmann::json recalls_json(const std::vector<double>& recalls) {
  auto out = nlohmann::json::array();
  for (double r : recalls) out.push_back(std::isnan(r) ? nlohmann::json(nullptr) : nlohmann::json(r));
  return out;
}

}  // namespace

nlohmann::json to_json(const EvalResult& result) {
  return {{"split", "test"},
          {"balanced_accuracy", result.balanced_accuracy},
          {"accuracy", result.accuracy},
          {"loss", result.loss},
          {"per_class_recall", recalls_json(result.recalls)}};
}

template <typename S>
double train_step(DuoFormer<S>& model, Adam<S>& optimizer, const ModelInputs<S>& inputs,
                  const std::vector<std::int64_t>& labels, const std::vector<Index>& rows, double lr) {
  model.set_training(true);
  std::vector<std::int64_t> y;
  for (auto r : rows) y.push_back(labels[r]);
  const auto loss = cross_entropy(inputs.logits(model, rows), y);
  backward(loss);
  optimizer.step(lr);
  return static_cast<double>(loss.item());
}

template <typename S>
RunRecord train(DuoFormer<S>& model, const ModelInputs<S>& inputs, const Dataset& dataset,
                const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (inputs.size() != dataset.size()) {
    throw ContractError("inputs hold " + std::to_string(inputs.size()) + " samples, dataset holds " +
                        std::to_string(dataset.size()));
  }
  const auto train_rows = dataset.indices(Split::train);
  const auto val_rows = dataset.indices(Split::val);
  const auto test_rows = dataset.indices(Split::test);
  if (train_rows.size() < 2 || val_rows.empty() || test_rows.empty()) {
    throw ContractError("training needs at least two train samples and nonempty val and test splits");
  }
  const auto& labels = dataset.labels;

  std::ofstream log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    log.open(*options.out_dir / "run.jsonl", std::ios::trunc);
    if (!log) throw FormatError("cannot write " + (*options.out_dir / "run.jsonl").string());
  }

  const auto steps_per_epoch = static_cast<std::int64_t>(make_batches(train_rows, config.batch_size).size());
  const std::int64_t total_steps = steps_per_epoch * config.max_epochs;
  model.params().zero_grad();
  Adam<S> optimizer(model.params().trainable(), config.beta1, config.beta2, config.adam_eps);
  EarlyStopping stopper(config.patience);
  Rng rng(config.seed);
  auto best = model.params().snapshot();
  RunRecord record;
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    auto order = train_rows;
    Rng shuffle = rng.split();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    const auto batches = make_batches(order, config.batch_size);
    model.set_training(true);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& rows = batches[b];
      rec.lr = onecycle_lr(step++, total_steps, config);
      std::vector<std::int64_t> y;
      for (auto r : rows) y.push_back(labels[r]);
      Tensor<S> logits, loss;
      try {
        logits = inputs.logits(model, rows);
        loss = cross_entropy(logits, y);
        backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("non-finite value in epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ": " + e.what());
      }
      optimizer.step(rec.lr);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(rows.size());
      const Index c = logits.dim(1);
      for (Index i = 0; i < logits.dim(0); ++i) {
        Index arg = 0;
        for (Index k = 1; k < c; ++k) {
          if (logits.data()[i * c + k] > logits.data()[i * c + arg]) arg = k;
        }
        correct += arg == y[i];
      }
    }
    rec.train_loss = loss_sum / static_cast<double>(train_rows.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(train_rows.size());
    rec.val_balanced_acc = evaluate(model, inputs, labels, val_rows, config.batch_size).balanced_accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    record.epochs.push_back(rec);

    if (stopper.update(rec.val_balanced_acc)) {
      best = model.params().snapshot();
      if (options.out_dir) model.save(*options.out_dir / "best.dfc");
    }
    if (log) {
      log << nlohmann::json{{"epoch", rec.epoch},
                            {"train_loss", rec.train_loss},
                            {"train_acc", rec.train_acc},
                            {"val_balanced_acc", rec.val_balanced_acc},
                            {"lr", rec.lr},
                            {"seconds", rec.seconds}}
                 .dump()
          << "\n"
          << std::flush;
    }
    if (options.on_epoch && !options.on_epoch(rec)) break;
    if (stopper.should_stop()) {
      record.early_stopped = true;
      break;
    }
  }

  if (options.out_dir) model.save(*options.out_dir / "last.dfc");
  model.params().restore(best);
  model.set_training(false);
  record.best_epoch = stopper.best_epoch();
  record.best_val_balanced_acc = stopper.best_score();
  record.test = evaluate(model, inputs, labels, test_rows, config.batch_size);

  if (options.out_dir) {
    std::ofstream metrics(*options.out_dir / "metrics.json");
    auto j = to_json(record.test);
    j["best_epoch"] = record.best_epoch;
    j["best_val_balanced_acc"] = record.best_val_balanced_acc;
    j["epochs_run"] = record.epochs.size();
    metrics << j.dump(2) << "\n";
  }
  return record;
}

#define DUO_INSTANTIATE(S)                                                                         \
  template void adam_step<S>(std::vector<Tensor<S>>&, const std::vector<Buffer<S>>&, AdamState<S>&, \
                             double, double, double, double);                                       \
  template class Adam<S>;                                                                           \
  template struct ModelInputs<S>;                                                                   \
  template ModelInputs<S> image_inputs<S>(const Dataset&);                                          \
  template EvalResult evaluate<S>(DuoFormer<S>&, const ModelInputs<S>&,                             \
                                  const std::vector<std::int64_t>&, const std::vector<Index>&, int); \
  template RunRecord train<S>(DuoFormer<S>&, const ModelInputs<S>&, const Dataset&,                 \
                              const TrainConfig&, const TrainOptions&);                             \
  template double train_step<S>(DuoFormer<S>&, Adam<S>&, const ModelInputs<S>&,                     \
                                const std::vector<std::int64_t>&, const std::vector<Index>&, double);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
