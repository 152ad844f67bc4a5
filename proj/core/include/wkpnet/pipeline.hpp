#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "wkpnet/locate.hpp"
#include "wkpnet/models.hpp"
#include "wkpnet/nn/losses.hpp"
#include "wkpnet/nn/optim.hpp"
#include "wkpnet/signalgen.hpp"
#include "wkpnet/wavelet.hpp"

namespace wkpnet::pipeline {

enum class FeaturizerKind { Wpd, Stft };

struct FeaturizerConfig {
  FeaturizerKind kind = FeaturizerKind::Wpd;
  wavelet::WaveletFamily basis{};
  int level = 5;
  wavelet::NodeOrder order = wavelet::NodeOrder::Frequency;
  wavelet::StftSettings stft{};

  /// Stable identifier such as "wpd-haar-L5-freq" or "stft-512-0.75".
  std::string describe() const;
  nn::Shape feature_shape(int window_len) const;
};

wavelet::FeatureTensor featurize(std::span<const signal::Complex> y, const FeaturizerConfig& config);

enum class ModelKind { Student, Teacher };

struct ModelConfig {
  ModelKind kind = ModelKind::Student;
  int width = 1;
  models::TeacherOptions teacher{{3, 4, 5, 3}, 64, 32, 0.25};
};

models::ModelGraph build_model(const ModelConfig& config, int num_classes, const nn::Shape& input);

enum class TrainMode { Plain, Distill };

std::string to_string(FeaturizerKind kind);
std::string to_string(ModelKind kind);
std::string to_string(TrainMode mode);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 10;
  double lr0 = 1e-3;
  int lr_halving_period = 2;
  double temperature = 5.0;
  double alpha = 0.5;
  bool t_squared = false;
  /// Evaluate the frozen teacher once per example instead of once per batch. Only valid
  /// while features are fixed between epochs, which holds for this pipeline.
  bool precompute_teacher_logits = false;
  std::uint64_t seed = 1;
  FeaturizerConfig featurizer;
  ModelConfig model;
  TrainMode mode = TrainMode::Plain;
  nn::AdamWSettings optimizer;

  void validate() const;
};

/// Featurized examples of one split, stored contiguously as float32.
struct FeatureSet {
  nn::Shape example_shape;
  std::vector<float> values;
  std::vector<int> labels;
  std::vector<int> days;

  std::size_t size() const { return labels.size(); }
  /// Copies the listed examples into a (batch, planes, height, width) tensor.
  nn::Tensor<float> batch(std::span<const std::size_t> indices) const;
};

struct Dataset {
  std::filesystem::path dir;
  signal::DatasetManifest manifest;
  std::vector<signal::Coordinate> coords;

  static Dataset open(const std::filesystem::path& dir);
  int num_classes() const { return static_cast<int>(manifest.points.size()); }
};

FeatureSet featurize_split(const Dataset& dataset, signal::Split split, const FeaturizerConfig& featurizer, int jobs = 1);

/// Thread-safe memo of featurized splits keyed by featurizer and split.
class FeatureCache {
 public:
  explicit FeatureCache(const Dataset& dataset, int jobs = 1) : dataset_(dataset), jobs_(jobs) {}
  std::shared_ptr<const FeatureSet> get(signal::Split split, const FeaturizerConfig& featurizer);

 private:
  const Dataset& dataset_;
  int jobs_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const FeatureSet>> cache_;
};

/// Ties a checkpoint to the dataset and the featurizer it was trained on.
std::uint64_t compatibility_hash(const signal::DatasetManifest& manifest, const FeaturizerConfig& featurizer);

using Logger = std::function<void(const std::string& line)>;
/// key=value lines on stderr, serialized across threads.
void stderr_logger(const std::string& line);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double kl = 0.0;
  double ce = 0.0;
  double train_accuracy = 0.0;
};

struct TrainedModel {
  models::ModelGraph graph;
  std::unique_ptr<nn::Sequential<float>> net;
  std::vector<EpochStats> history;
};

/// Seeded epochs of shuffled mini-batches. In distill mode `teacher` is evaluated in eval
/// mode per batch (or once per example with precompute_teacher_logits) and never updated. A trailing batch of one example is merged into the
/// previous batch so batch statistics stay defined.
TrainedModel train(const FeatureSet& train_set, const models::ModelGraph& graph, const TrainConfig& config,
                   nn::Sequential<float>* teacher = nullptr, const Logger& log = {});

struct Evaluation {
  locate::MetricsSummary metrics;
  double accuracy = 0.0;
  std::vector<locate::PositionEstimate> estimates;
};

Evaluation evaluate(nn::Sequential<float>& net, const FeatureSet& set, std::span<const signal::Coordinate> coords);

struct SplitMetrics {
  double mde = 0.0;
  double std = 0.0;
  double cdf_1m = 0.0;
  double cdf_3m = 0.0;
  double accuracy = 0.0;
};

SplitMetrics split_metrics(const Evaluation& evaluation);

struct ExperimentRecord {
  std::string cell_id;
  std::string featurizer;
  std::string basis;
  int level = 0;
  std::string mode;
  std::uint64_t seed = 0;
  std::string config_json;
  std::vector<EpochStats> history;
  bool completed = false;
  std::map<std::string, SplitMetrics> metrics;
  std::string checkpoint;
  double wall_seconds = 0.0;
  std::string error;

  std::string to_json() const;
  static ExperimentRecord from_json(const std::string& text);
};

std::string config_to_json(const TrainConfig& config);

struct ExperimentOutcome {
  ExperimentRecord record;
  TrainedModel model;
};

/// Trains one model, evaluates it on every test split, writes the checkpoint (model.ckpt)
/// and the record (record.json) under out_dir. Distill mode needs `teacher`.
ExperimentOutcome run_experiment(const Dataset& dataset, FeatureCache& cache, const TrainConfig& config,
                                const std::filesystem::path& out_dir, const std::string& cell_id,
                                nn::Sequential<float>* teacher = nullptr, const Logger& log = {});

/// Loads a teacher checkpoint for a distillation run, checking it against the dataset.
std::unique_ptr<nn::Sequential<float>> load_teacher(const Dataset& dataset, const TrainConfig& config,
                                                    const std::filesystem::path& checkpoint);

struct GridSpec {
  std::vector<FeaturizerKind> featurizers{FeaturizerKind::Wpd};
  std::vector<wavelet::WaveletFamily> bases{wavelet::WaveletFamily{}};
  std::vector<int> levels{5};
  /// Student modes; distill cells train (and report) one teacher per featurizer and seed.
  std::vector<TrainMode> modes{TrainMode::Plain};
  std::vector<std::uint64_t> seeds{1};
  TrainConfig base;
};

struct GridCell {
  std::string id;
  TrainConfig config;
};

/// Cartesian product featurizer x basis x level (WPD only) x mode x seed, in a fixed order.
std::vector<GridCell> enumerate_grid(const GridSpec& spec);

struct GridResult {
  std::vector<ExperimentRecord> teachers;
  std::vector<ExperimentRecord> students;
};

/// Runs every cell (teachers first), each in its own subdirectory of out_dir, and writes
/// grid.csv with one row per model and test split. Failed cells are recorded and skipped.
GridResult run_experiment_grid(const Dataset& dataset, const GridSpec& spec, const std::filesystem::path& out_dir,
                               int jobs = 1, const Logger& log = {});

std::string grid_csv(const GridResult& result);

}  // namespace wkpnet::pipeline
