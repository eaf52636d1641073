#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmil/bag_graph.hpp"
#include "gmil/model.hpp"

namespace gmil {

struct TrainConfig {
  std::size_t max_epochs = 200;
  std::size_t batch_size = 1;
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  std::size_t folds = 10;
  std::size_t repeats = 5;
  /// z-score features with statistics of the training split.
  bool standardize = true;
  /// Worker threads for fold-level parallelism; 0 uses the OpenMP default.
  int threads = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct GraphConfig {
  GraphMode mode = GraphMode::kSimilarity;
  double threshold = kDefaultSimilarityThreshold;
};

// ---- losses ---------------------------------------------------------------

inline constexpr double kProbClamp = 1e-12;

/// Binary cross-entropy with prob clamped to [1e-12, 1 - 1e-12].
double bce_loss(double prob, int label);
/// -log probs[label] with the same clamp.
double ce_loss(std::span<const double> probs, int label);
/// Loss of a forward pass: bce for two classes, ce otherwise.
double trace_loss(const ForwardTrace& trace, int label);

// ---- optimizer ------------------------------------------------------------

struct AdamState {
  ParameterSet m;
  ParameterSet v;
  std::uint64_t step = 0;

  static AdamState init(const ParameterSet& params);
};

/// Decoupled weight decay (p -= lr * wd * p) followed by a bias-corrected
/// Adam update. Throws TrainingError naming the first non-finite gradient.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state,
               const TrainConfig& cfg);

// ---- training -------------------------------------------------------------

/// A bag with its stacked features and graph, ready for forward passes.
struct PreparedBag {
  std::string id;
  int label = 0;
  Matrix features;
  BagGraph graph;
};

PreparedBag prepare_bag(const Bag& bag, const GraphConfig& graph);
std::vector<PreparedBag> prepare_bags(const std::vector<Bag>& bags, const GraphConfig& graph);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ModelParams best;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> history;
};

/// Batch-size-one training: each epoch visits the training bags in a seeded
/// shuffled order with one Adam step per bag, then scores the validation
/// split. Returns the snapshot with the lowest mean validation loss, the
/// earliest epoch winning ties.
TrainResult train_one(const std::vector<PreparedBag>& train, const std::vector<PreparedBag>& val,
                      const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                      std::uint64_t seed);

double mean_loss(const ModelParams& params, const std::vector<PreparedBag>& bags);

// ---- metrics --------------------------------------------------------------

struct Prediction {
  double prob = 0.0;  // probability of the positive class
  int label = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  /// Empty when the labels contain a single class.
  std::optional<double> auc;
};

/// Confusion-matrix metrics at threshold 0.5 and the rank-statistic AUC
/// (ties get half credit). Precision/recall are 0 when undefined.
Metrics compute_metrics(std::span<const Prediction> predictions);

std::vector<Prediction> predict(const ModelParams& params, const std::vector<PreparedBag>& bags);

// ---- cross-validation -----------------------------------------------------

/// Stratified fold index per item; fold sizes differ by at most one.
std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          Rng& rng);

/// Splits item indices into (kept, held-out), holding out about `fraction`
/// of each class while leaving every class at least one kept item.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    std::span<const int> labels, double fraction, Rng& rng);

struct FoldReport {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  std::size_t test_size = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  std::optional<double> auc;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

void to_json(nlohmann::json& j, const FoldReport& r);

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

MeanStderr mean_stderr(std::span<const double> values);

struct MetricSummary {
  MeanStderr over_folds;    // all fold x repeat scores
  MeanStderr over_repeats;  // per-repeat means
};

struct CrossValidationResult {
  std::vector<FoldReport> folds;  // ordered by (repeat, fold)
  MetricSummary accuracy, precision, recall, f_score, auc;
};

void to_json(nlohmann::json& j, const CrossValidationResult& r);

/// Everything a fold trainer sees. Features are already standardized and
/// graphs built.
struct FoldData {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  const std::vector<PreparedBag>* train = nullptr;
  const std::vector<PreparedBag>* val = nullptr;
};

struct FoldModel {
  std::function<double(const PreparedBag&)> positive_probability;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

using FoldTrainer = std::function<FoldModel(const FoldData&)>;

/// The trainer used by default: train_one on the fold's splits.
FoldTrainer default_fold_trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

/// Seeded stratified k-fold cross-validation repeated train_cfg.repeats
/// times. Folds run in parallel; results do not depend on the thread count.
CrossValidationResult cross_validate(const std::vector<Bag>& bags, const ModelConfig& model_cfg,
                                     const TrainConfig& train_cfg, const GraphConfig& graph_cfg,
                                     const FoldTrainer& trainer = {});

}  // namespace gmil
