#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moonlite/distribution.hpp"
#include "moonlite/errors.hpp"
#include "moonlite/loss.hpp"
#include "moonlite/matrix.hpp"
#include "moonlite/metrics.hpp"
#include "moonlite/net.hpp"
#include "moonlite/rng.hpp"
#include "moonlite/synthdata.hpp"

namespace moonlite {

enum class Objective { MoonSampled, MoonWeighted, HingeSeparate };

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::MoonSampled: return "moon-sampled";
    case Objective::MoonWeighted: return "moon-weighted";
    default: return "hinge-separate";
  }
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "moon-sampled") return Objective::MoonSampled;
  if (s == "moon-weighted") return Objective::MoonWeighted;
  if (s == "hinge-separate") return Objective::HingeSeparate;
  throw config_error("unknown objective \"" + s + "\"");
}

enum class SelectionMetric { AverageError, BalancedError };

inline std::string to_string(SelectionMetric m) {
  return m == SelectionMetric::AverageError ? "average_error" : "balanced_error";
}

inline SelectionMetric selection_metric_from_string(const std::string& s) {
  if (s == "average_error") return SelectionMetric::AverageError;
  if (s == "balanced_error") return SelectionMetric::BalancedError;
  throw config_error("unknown selection_metric \"" + s + "\"");
}

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 25;
  std::uint64_t seed = 0;
  Objective objective = Objective::MoonSampled;
  // Absent target means "train to the source distribution": all weights 1.
  std::optional<ClassDistribution> target;
  RmsPropConfig optimizer;
  SelectionMetric selection_metric = SelectionMetric::AverageError;
  std::vector<std::size_t> hidden_dims = {64, 32};
  Activation activation = Activation::Tanh;
};

struct EpochRecord {
  double train_loss = 0.0;          // mean per-sample loss over the epoch
  double val_average_error = 0.0;
  double val_balanced_error = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t selected_epoch = 0;   // epoch whose checkpoint was retained
};

struct TrainResult {
  MlpModel model;
  TrainHistory history;
  AdaptationWeights weights;        // the class weights training actually used
  ClassDistribution source;
};

namespace detail {

// Sub-stream tags; all trainer randomness is derived from the config seed.
inline constexpr std::uint64_t kInitStream = 10;
inline constexpr std::uint64_t kShuffleStream = 11;
inline constexpr std::uint64_t kSampleStream = 12;
inline constexpr std::uint64_t kSeparateStreamBase = 16;

inline double selection_value(const EpochRecord& r, SelectionMetric m) {
  return m == SelectionMetric::AverageError ? r.val_average_error : r.val_balanced_error;
}

// Output-side gradient of the configured objective for one batch.
inline Matrix objective_gradient(const TrainConfig& config, const Matrix& outputs,
                                 const Matrix& labels, const AdaptationWeights& weights,
                                 Rng& sample_rng) {
  if (config.objective == Objective::HingeSeparate) {
    Matrix grad(outputs.rows(), outputs.cols());
    for (std::size_t j = 0; j < outputs.rows(); ++j)
      for (std::size_t i = 0; i < outputs.cols(); ++i)
        grad(j, i) = hinge_gradient(outputs(j, i), labels(j, i));
    return grad;
  }
  const LossBatch batch{outputs, labels, weights};
  return config.objective == Objective::MoonWeighted ? moon_gradient_weighted(batch)
                                                     : moon_gradient_sampled(batch, sample_rng);
}

inline double objective_loss(const TrainConfig& config, const Matrix& outputs,
                             const Matrix& labels, const AdaptationWeights& weights) {
  if (config.objective == Objective::HingeSeparate) {
    double total = 0.0;
    for (std::size_t j = 0; j < outputs.rows(); ++j)
      for (std::size_t i = 0; i < outputs.cols(); ++i)
        total += hinge_loss(outputs(j, i), labels(j, i));
    return total;
  }
  return moon_loss({outputs, labels, weights});
}

inline TrainResult train_single_network(const TrainConfig& config,
                                        const AttributeDataset& train_set,
                                        const AttributeDataset& val_set) {
  train_set.validate();
  val_set.validate();
  if (train_set.features.cols() != val_set.features.cols() ||
      train_set.num_attributes() != val_set.num_attributes())
    throw shape_error("train: train and validation sets disagree on d or M");
  if (config.batch_size == 0 || config.batch_size > train_set.size())
    throw config_error("train: batch_size must be in [1, training-set size]");
  if (config.max_epochs == 0) throw config_error("train: max_epochs must be positive");

  const std::size_t n = train_set.size(), m = train_set.num_attributes();
  TrainResult result;
  result.source = estimate_source(train_set.labels);
  const ClassDistribution& target = config.target ? *config.target : result.source;
  if (target.size() != m) throw shape_error("train: target attribute count mismatch");
  // The hinge baseline is never combined with adaptation weights.
  result.weights = config.objective == Objective::HingeSeparate
                       ? AdaptationWeights::ones(m)
                       : adaptation_weights(result.source, target);

  std::vector<std::size_t> dims;
  dims.push_back(train_set.features.cols());
  dims.insert(dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
  dims.push_back(m);
  MlpModel model = init_model(dims, config.activation, derive_seed(config.seed, kInitStream));
  OptimizerState optimizer = make_optimizer(model, config.optimizer);
  Rng shuffle_rng = make_rng(derive_seed(config.seed, kShuffleStream));
  Rng sample_rng = make_rng(derive_seed(config.seed, kSampleStream));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  MlpModel best_model = model;
  double best_value = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - begin);
      std::span<const std::size_t> idx(order.data() + begin, count);
      const Matrix bx = gather_rows(train_set.features, idx);
      const Matrix by = gather_rows(train_set.labels, idx);
      ForwardTrace trace = forward_trace(model, bx);
      const double batch_loss = objective_loss(config, trace.output, by, result.weights);
      if (!std::isfinite(batch_loss))
        throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                            ", sample offset " + std::to_string(begin));
      epoch_loss += batch_loss;
      const Matrix grad_out =
          objective_gradient(config, trace.output, by, result.weights, sample_rng);
      rmsprop_step(optimizer, model, backward(model, trace, grad_out));
    }
    const Matrix val_scores = forward(model, val_set.features);
    EpochRecord record;
    record.train_loss = epoch_loss / static_cast<double>(n);
    record.val_average_error = classification_error(val_scores, val_set.labels).average;
    // Sparse validation splits may lack a class for some attribute; skip those
    // columns in the monitoring metric rather than aborting the run.
    record.val_balanced_error =
        balanced_error(val_scores, val_set.labels, target, /*skip_degenerate=*/true).average;
    result.history.epochs.push_back(record);
    const double value = selection_value(record, config.selection_metric);
    if (value < best_value) {
      best_value = value;
      best_model = model;
      result.history.selected_epoch = epoch;
    }
  }
  result.model = std::move(best_model);
  return result;
}

}  // namespace detail

// Trains one joint network with an output per attribute, shuffling with a
// seeded stream, and keeps the checkpoint with minimum validation error.
inline TrainResult train_moon(const TrainConfig& config, const AttributeDataset& train_set,
                              const AttributeDataset& val_set) {
  if (config.objective == Objective::HingeSeparate)
    throw config_error("train_moon: hinge-separate requires per-attribute networks");
  return detail::train_single_network(config, train_set, val_set);
}

struct SeparateResult {
  std::vector<TrainResult> per_attribute;     // one single-output network each
};

inline AttributeDataset slice_attribute(const AttributeDataset& dataset, std::size_t attribute) {
  AttributeDataset out;
  out.features = dataset.features;
  out.labels = extract_column(dataset.labels, attribute);
  out.attribute_names = {dataset.attribute_names[attribute]};
  return out;
}

// The separate-networks baseline: per attribute, an independent network of the
// same topology with a single output, trained on the full feature set with
// its own deterministic seed.
inline SeparateResult train_separate(const TrainConfig& config, const AttributeDataset& train_set,
                                     const AttributeDataset& val_set) {
  train_set.validate();
  val_set.validate();
  SeparateResult result;
  const std::size_t m = train_set.num_attributes();
  result.per_attribute.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    TrainConfig sub = config;
    sub.seed = derive_seed(config.seed, detail::kSeparateStreamBase + i);
    if (config.target) {
      sub.target = ClassDistribution::from_masses({config.target->positive(i)},
                                                  {config.target->negative(i)});
    }
    result.per_attribute.push_back(detail::train_single_network(sub, slice_attribute(train_set, i),
                                                                slice_attribute(val_set, i)));
  }
  return result;
}

inline std::size_t total_parameter_count(const SeparateResult& result) {
  std::size_t total = 0;
  for (const TrainResult& r : result.per_attribute) total += r.model.parameter_count();
  return total;
}

// Scores a frozen model on held-out data and fills the full report.
inline MetricsReport evaluate(const MlpModel& model, const AttributeDataset& test_set,
                              const ClassDistribution& target, bool skip_degenerate = false) {
  test_set.validate();
  if (model.output_dim() != test_set.num_attributes())
    throw shape_error("evaluate: model outputs " + std::to_string(model.output_dim()) +
                      " attributes, test set has " + std::to_string(test_set.num_attributes()));
  const Matrix scores = forward(model, test_set.features);
  return make_report(scores, test_set.labels, test_set.attribute_names, target, skip_degenerate);
}

// Same, stitching one single-output model per attribute into a score matrix.
inline MetricsReport evaluate(const std::vector<MlpModel>& models,
                              const AttributeDataset& test_set, const ClassDistribution& target,
                              bool skip_degenerate = false) {
  test_set.validate();
  if (models.size() != test_set.num_attributes())
    throw shape_error("evaluate: " + std::to_string(models.size()) + " models for " +
                      std::to_string(test_set.num_attributes()) + " attributes");
  Matrix scores(test_set.size(), models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].output_dim() != 1)
      throw shape_error("evaluate: model " + std::to_string(i) + " is not single-output");
    const Matrix column = forward(models[i], test_set.features);
    for (std::size_t j = 0; j < scores.rows(); ++j) scores(j, i) = column(j, 0);
  }
  return make_report(scores, test_set.labels, test_set.attribute_names, target, skip_degenerate);
}

inline std::string history_to_csv(const TrainHistory& history) {
  std::string out = "epoch,train_loss,val_average_error,val_balanced_error\n";
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const EpochRecord& r = history.epochs[e];
    out += std::to_string(e) + "," + format_double(r.train_loss) + "," +
           format_double(r.val_average_error) + "," + format_double(r.val_balanced_error) + "\n";
  }
  return out;
}

inline void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  write_file_atomic(path, history_to_csv(history));
}

}  // namespace moonlite
