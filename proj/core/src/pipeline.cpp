#include "wkpnet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "wkpnet/fileutil.hpp"
#include "wkpnet/seeding.hpp"

namespace wkpnet::pipeline {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;     // "init"
constexpr std::uint64_t kShuffleTag = 0x73687566;  // "shuf"

std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::vector<signal::Split> test_splits(const signal::DatasetManifest& manifest) {
  std::vector<signal::Split> out;
  for (signal::Split s : {signal::Split::TestDay1, signal::Split::TestDay2, signal::Split::TestDay3}) {
    if (!manifest.indices_of(s).empty()) out.push_back(s);
  }
  return out;
}

int argmax_row(const nn::Tensor<float>& logits, int n) {
  const int classes = logits.shape().c;
  int best = 0;
  for (int i = 1; i < classes; ++i) {
    if (logits.at(n, i, 0, 0) > logits.at(n, best, 0, 0)) best = i;
  }
  return best;
}

void log_line(const Logger& log, const std::string& line) {
  if (log) log(line);
}

}  // namespace

std::string to_string(FeaturizerKind kind) { return kind == FeaturizerKind::Wpd ? "wpd" : "stft"; }
std::string to_string(ModelKind kind) { return kind == ModelKind::Student ? "student" : "teacher"; }
std::string to_string(TrainMode mode) { return mode == TrainMode::Plain ? "plain" : "distill"; }

std::string FeaturizerConfig::describe() const {
  if (kind == FeaturizerKind::Stft) return "stft-" + std::to_string(stft.fft_size) + "-" + format_g(stft.overlap);
  return "wpd-" + basis.name() + "-L" + std::to_string(level) +
         (order == wavelet::NodeOrder::Frequency ? "-freq" : "-natural");
}

nn::Shape FeaturizerConfig::feature_shape(int window_len) const {
  if (kind == FeaturizerKind::Stft) {
    return {1, 2, wavelet::stft_frame_count(static_cast<std::size_t>(window_len), stft), stft.fft_size};
  }
  require(level >= 1 && level < 31 && window_len % (1 << level) == 0, ErrorKind::Shape,
          "window length " + std::to_string(window_len) + " is not divisible by 2^" + std::to_string(level));
  return {1, 2, window_len >> level, 1 << level};
}

wavelet::FeatureTensor featurize(std::span<const signal::Complex> y, const FeaturizerConfig& config) {
  if (config.kind == FeaturizerKind::Stft) return wavelet::featurize_stft(y, config.stft);
  return wavelet::featurize_wpd(y, wavelet::build_filter_bank(config.basis), config.level, config.order);
}

models::ModelGraph build_model(const ModelConfig& config, int num_classes, const nn::Shape& input) {
  if (config.kind == ModelKind::Teacher) return models::build_teacher(num_classes, config.teacher, input);
  return models::build_student(num_classes, config.width, input);
}

void TrainConfig::validate() const {
  require(epochs > 0 && batch_size >= 2 && lr0 > 0.0 && lr_halving_period > 0, ErrorKind::Configuration,
          "epochs, lr0 and halving period must be positive and batch size at least 2");
  require(temperature > 0.0, ErrorKind::Configuration, "temperature must be positive");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::Configuration, "alpha must lie in [0, 1]");
  require(model.width >= 1, ErrorKind::Configuration, "student width must be at least 1");
  if (featurizer.kind == FeaturizerKind::Wpd) {
    require(featurizer.level >= 1, ErrorKind::Configuration, "WPD level must be at least 1");
  } else {
    require(featurizer.stft.fft_size >= 2 && featurizer.stft.overlap >= 0.0 && featurizer.stft.overlap < 1.0,
            ErrorKind::Configuration, "invalid STFT settings");
  }
}

nn::Tensor<float> FeatureSet::batch(std::span<const std::size_t> indices) const {
  require(!indices.empty(), ErrorKind::Shape, "empty batch");
  nn::Shape s = example_shape;
  s.n = static_cast<int>(indices.size());
  nn::Tensor<float> out(s);
  const std::size_t per = example_shape.count();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < size(), ErrorKind::Parameter, "example index out of range");
    std::copy_n(values.data() + indices[i] * per, per, out.data() + i * per);
  }
  return out;
}

Dataset Dataset::open(const std::filesystem::path& dir) {
  Dataset d;
  d.dir = dir;
  d.manifest = signal::read_manifest(dir);
  for (const signal::ReferencePoint& p : d.manifest.points) d.coords.push_back(p.coord);
  return d;
}

FeatureSet featurize_split(const Dataset& dataset, signal::Split split, const FeaturizerConfig& featurizer, int jobs) {
  const std::vector<std::size_t> indices = dataset.manifest.indices_of(split);
  require(!indices.empty(), ErrorKind::EmptySet, "dataset has no " + signal::to_string(split) + " examples");
  FeatureSet set;
  set.example_shape = featurizer.feature_shape(dataset.manifest.window_len);
  const std::size_t per = set.example_shape.count();
  set.values.resize(per * indices.size());
  for (std::size_t index : indices) {
    set.labels.push_back(dataset.manifest.examples[index].label);
    set.days.push_back(dataset.manifest.examples[index].day);
  }
  parallel_for(indices.size(), jobs, [&](std::size_t i) {
    const std::vector<signal::Complex> y = signal::load_example(dataset.dir, dataset.manifest, indices[i]);
    const wavelet::FeatureTensor f = featurize(y, featurizer);
    require(f.values.size() == per, ErrorKind::Shape, "featurizer produced an unexpected shape");
    std::copy(f.values.begin(), f.values.end(), set.values.begin() + static_cast<std::ptrdiff_t>(i * per));
  });
  return set;
}

std::shared_ptr<const FeatureSet> FeatureCache::get(signal::Split split, const FeaturizerConfig& featurizer) {
  const std::string key = featurizer.describe() + "|" + signal::to_string(split);
  std::lock_guard lock(mutex_);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto set = std::make_shared<const FeatureSet>(featurize_split(dataset_, split, featurizer, jobs_));
  cache_.emplace(key, set);
  return set;
}

std::uint64_t compatibility_hash(const signal::DatasetManifest& manifest, const FeaturizerConfig& featurizer) {
  return fnv1a(featurizer.describe(), mix64(manifest.config_hash));
}

void stderr_logger(const std::string& line) {
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  std::cerr << line << '\n';
}

TrainedModel train(const FeatureSet& train_set, const models::ModelGraph& graph, const TrainConfig& config,
                   nn::Sequential<float>* teacher, const Logger& log) {
  config.validate();
  require(config.mode == TrainMode::Plain || teacher != nullptr, ErrorKind::Configuration,
          "distillation needs a teacher model");
  require(train_set.size() >= 2, ErrorKind::EmptySet, "training needs at least 2 examples");

  TrainedModel tm;
  tm.graph = graph;
  tm.net = models::instantiate<float>(graph);
  nn::initialize_parameters(*tm.net, derive_seed({config.seed, kInitTag}));
  nn::AdamW<float> optimizer(nn::parameter_list(*tm.net), config.optimizer);
  const nn::DistillSettings distill{config.temperature, config.alpha, config.t_squared};

  const std::size_t n = train_set.size();
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(n);

  // The teacher is frozen and runs in eval mode, so its logits are fixed per example.
  std::vector<float> soft_targets;
  int soft_classes = 0;
  if (config.mode == TrainMode::Distill && config.precompute_teacher_logits) {
    constexpr std::size_t kChunk = 32;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += kChunk) {
      idx.resize(std::min(start + kChunk, n) - start);
      std::iota(idx.begin(), idx.end(), start);
      const nn::Tensor<float> z = teacher->forward(train_set.batch(idx), nn::Mode::Eval);
      soft_classes = z.shape().c;
      soft_targets.insert(soft_targets.end(), z.values().begin(), z.values().end());
    }
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = nn::step_decay_lr(config.lr0, epoch, config.lr_halving_period);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed({config.seed, kShuffleTag, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    std::size_t correct = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < n; ++batch_index) {
      std::size_t end = std::min(start + batch_size, n);
      if (n - end == 1) end = n;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (std::size_t i : idx) labels.push_back(train_set.labels[i]);

      try {
        const nn::Tensor<float> x = train_set.batch(idx);
        nn::zero_gradients(*tm.net);
        const nn::Tensor<float> logits = tm.net->forward(x, nn::Mode::Train);
        nn::LossResult<float> loss;
        if (config.mode == TrainMode::Distill) {
          nn::Tensor<float> soft;
          if (config.precompute_teacher_logits) {
            soft = nn::Tensor<float>({static_cast<int>(idx.size()), soft_classes, 1, 1});
            for (std::size_t i = 0; i < idx.size(); ++i) {
              std::copy_n(soft_targets.begin() + static_cast<std::ptrdiff_t>(idx[i] * soft_classes), soft_classes,
                          soft.data() + i * soft_classes);
            }
          } else {
            soft = teacher->forward(x, nn::Mode::Eval);
          }
          loss = nn::kd_loss(logits, soft, labels, distill);
        } else {
          loss = nn::cross_entropy(logits, labels);
        }
        require(std::isfinite(loss.total), ErrorKind::Divergence, "non-finite loss");
        tm.net->backward(loss.grad);
        optimizer.step(lr);

        const double w = static_cast<double>(idx.size());
        stats.loss += loss.total * w;
        stats.kl += loss.kl * w;
        stats.ce += loss.ce * w;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          if (argmax_row(logits, static_cast<int>(i)) == labels[i]) ++correct;
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Divergence) throw;
        fail(ErrorKind::Divergence,
             "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) + ": " + e.what());
      }
      start = end;
    }
    stats.loss /= static_cast<double>(n);
    stats.kl /= static_cast<double>(n);
    stats.ce /= static_cast<double>(n);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    tm.history.push_back(stats);

    std::ostringstream line;
    line.precision(6);
    line << "event=epoch model=" << graph.name << " mode=" << to_string(config.mode) << " seed=" << config.seed
         << " epoch=" << epoch << " lr=" << lr << " loss=" << stats.loss << " ce=" << stats.ce << " kl=" << stats.kl
         << " train_acc=" << stats.train_accuracy;
    log_line(log, line.str());
  }
  return tm;
}

Evaluation evaluate(nn::Sequential<float>& net, const FeatureSet& set, std::span<const signal::Coordinate> coords) {
  require(set.size() > 0, ErrorKind::EmptySet, "nothing to evaluate");
  Evaluation ev;
  constexpr std::size_t kChunk = 32;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  std::vector<double> z;
  for (std::size_t start = 0; start < set.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, set.size());
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const nn::Tensor<float> logits = net.forward(set.batch(idx), nn::Mode::Eval);
    require(logits.shape().c == static_cast<int>(coords.size()), ErrorKind::Incompatibility,
            "model class count differs from the dataset's reference points");
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const int n = static_cast<int>(i);
      z.assign(coords.size(), 0.0);
      for (std::size_t c = 0; c < coords.size(); ++c) z[c] = logits.at(n, static_cast<int>(c), 0, 0);
      const int label = set.labels[idx[i]];
      ev.estimates.push_back(locate::estimate_position(z, coords, coords[label]));
      if (argmax_row(logits, n) == label) ++correct;
    }
  }
  ev.metrics = locate::summarize(ev.estimates);
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return ev;
}

SplitMetrics split_metrics(const Evaluation& evaluation) {
  return {evaluation.metrics.mde, evaluation.metrics.std, evaluation.metrics.cdf_at(1.0),
          evaluation.metrics.cdf_at(3.0), evaluation.accuracy};
}

std::string ExperimentRecord::to_json() const {
  json j;
  j["cell_id"] = cell_id;
  j["featurizer"] = featurizer;
  j["basis"] = basis;
  j["level"] = level;
  j["mode"] = mode;
  j["seed"] = seed;
  j["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  json epochs = json::array();
  for (const EpochStats& e : history) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"loss", e.loss},
                      {"kl", e.kl},
                      {"ce", e.ce},
                      {"train_accuracy", e.train_accuracy}});
  }
  j["epochs"] = epochs;
  j["completed"] = completed;
  if (completed) {
    json m = json::object();
    for (const auto& [split, s] : metrics) {
      m[split] = {{"mde", s.mde}, {"std", s.std}, {"cdf_1m", s.cdf_1m}, {"cdf_3m", s.cdf_3m}, {"accuracy", s.accuracy}};
    }
    j["metrics"] = m;
  }
  j["checkpoint"] = checkpoint;
  j["wall_seconds"] = wall_seconds;
  if (!error.empty()) j["error"] = error;
  return j.dump(2) + "\n";
}

ExperimentRecord ExperimentRecord::from_json(const std::string& text) {
  ExperimentRecord r;
  try {
    const json j = json::parse(text);
    r.cell_id = j.at("cell_id").get<std::string>();
    r.featurizer = j.at("featurizer").get<std::string>();
    r.basis = j.at("basis").get<std::string>();
    r.level = j.at("level").get<int>();
    r.mode = j.at("mode").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_json = j.at("config").dump();
    for (const json& e : j.at("epochs")) {
      r.history.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(), e.at("loss").get<double>(),
                           e.at("kl").get<double>(), e.at("ce").get<double>(), e.at("train_accuracy").get<double>()});
    }
    r.completed = j.at("completed").get<bool>();
    if (j.contains("metrics")) {
      for (const auto& [split, m] : j.at("metrics").items()) {
        r.metrics[split] = {m.at("mde").get<double>(), m.at("std").get<double>(), m.at("cdf_1m").get<double>(),
                            m.at("cdf_3m").get<double>(), m.at("accuracy").get<double>()};
      }
    }
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, std::string("malformed experiment record: ") + e.what());
  }
  return r;
}

ExperimentOutcome run_experiment(const Dataset& dataset, FeatureCache& cache, const TrainConfig& config,
                                 const std::filesystem::path& out_dir, const std::string& cell_id,
                                 nn::Sequential<float>* teacher, const Logger& log) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  ExperimentOutcome out;
  ExperimentRecord& record = out.record;
  record.cell_id = cell_id;
  record.featurizer = to_string(config.featurizer.kind);
  if (config.featurizer.kind == FeaturizerKind::Wpd) {
    record.basis = config.featurizer.basis.name();
    record.level = config.featurizer.level;
  }
  record.mode = config.model.kind == ModelKind::Teacher ? "teacher" : to_string(config.mode);
  record.seed = config.seed;
  record.config_json = config_to_json(config);

  const auto train_set = cache.get(signal::Split::Train, config.featurizer);
  const models::ModelGraph graph = build_model(config.model, dataset.num_classes(), train_set->example_shape);
  log_line(log, "event=train_start cell=" + cell_id + " model=" + graph.name + " features=" +
                    config.featurizer.describe() + " examples=" + std::to_string(train_set->size()));
  out.model = train(*train_set, graph, config, config.mode == TrainMode::Distill ? teacher : nullptr, log);
  record.history = out.model.history;

  for (signal::Split split : test_splits(dataset.manifest)) {
    const auto test_set = cache.get(split, config.featurizer);
    const Evaluation ev = evaluate(*out.model.net, *test_set, dataset.coords);
    record.metrics[signal::to_string(split)] = split_metrics(ev);
    std::ostringstream line;
    line.precision(6);
    line << "event=evaluate cell=" << cell_id << " split=" << signal::to_string(split) << " mde=" << ev.metrics.mde
         << " std=" << ev.metrics.std << " acc=" << ev.accuracy;
    log_line(log, line.str());
  }

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path checkpoint = out_dir / "model.ckpt";
  models::write_checkpoint(checkpoint, graph, *out.model.net, compatibility_hash(dataset.manifest, config.featurizer));
  record.checkpoint = checkpoint.string();
  record.completed = true;
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const std::string text = record.to_json();
  write_file_atomic(out_dir / "record.json", [&](std::ostream& os) { os << text; });
  return out;
}

std::unique_ptr<nn::Sequential<float>> load_teacher(const Dataset& dataset, const TrainConfig& config,
                                                    const std::filesystem::path& checkpoint) {
  const models::CheckpointInfo info = models::read_checkpoint_info(checkpoint);
  require(info.config_hash == compatibility_hash(dataset.manifest, config.featurizer), ErrorKind::Incompatibility,
          "teacher checkpoint " + checkpoint.string() + " was trained on a different dataset or featurizer");
  ModelConfig teacher_model = config.model;
  teacher_model.kind = ModelKind::Teacher;
  const models::ModelGraph graph =
      build_model(teacher_model, dataset.num_classes(), config.featurizer.feature_shape(dataset.manifest.window_len));
  auto net = models::instantiate<float>(graph);
  models::read_checkpoint(checkpoint, graph, *net);
  return net;
}

std::vector<GridCell> enumerate_grid(const GridSpec& spec) {
  require(!spec.featurizers.empty() && !spec.modes.empty() && !spec.seeds.empty(), ErrorKind::Configuration,
          "grid needs at least one featurizer, mode and seed");
  std::vector<FeaturizerConfig> featurizers;
  for (FeaturizerKind kind : spec.featurizers) {
    FeaturizerConfig f = spec.base.featurizer;
    f.kind = kind;
    if (kind == FeaturizerKind::Stft) {
      featurizers.push_back(f);
      continue;
    }
    require(!spec.bases.empty() && !spec.levels.empty(), ErrorKind::Configuration, "WPD cells need bases and levels");
    for (const wavelet::WaveletFamily& basis : spec.bases) {
      for (int level : spec.levels) {
        f.basis = basis;
        f.level = level;
        featurizers.push_back(f);
      }
    }
  }
  std::vector<GridCell> cells;
  for (const FeaturizerConfig& f : featurizers) {
    for (TrainMode mode : spec.modes) {
      for (std::uint64_t seed : spec.seeds) {
        GridCell cell;
        cell.config = spec.base;
        cell.config.featurizer = f;
        cell.config.mode = mode;
        cell.config.seed = seed;
        cell.config.model.kind = ModelKind::Student;
        cell.id = f.describe() + "/" + to_string(mode) + "/seed" + std::to_string(seed);
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

namespace {

std::string teacher_id(const FeaturizerConfig& f, std::uint64_t seed) {
  return f.describe() + "/teacher/seed" + std::to_string(seed);
}

ExperimentRecord failed_record(const std::string& id, const TrainConfig& config, const std::string& error) {
  ExperimentRecord r;
  r.cell_id = id;
  r.featurizer = to_string(config.featurizer.kind);
  if (config.featurizer.kind == FeaturizerKind::Wpd) {
    r.basis = config.featurizer.basis.name();
    r.level = config.featurizer.level;
  }
  r.mode = config.model.kind == ModelKind::Teacher ? "teacher" : to_string(config.mode);
  r.seed = config.seed;
  r.config_json = config_to_json(config);
  r.error = error;
  return r;
}

}  // namespace

GridResult run_experiment_grid(const Dataset& dataset, const GridSpec& spec, const std::filesystem::path& out_dir,
                               int jobs, const Logger& log) {
  const std::vector<GridCell> cells = enumerate_grid(spec);
  FeatureCache cache(dataset, 1);

  std::vector<GridCell> teachers;
  for (const GridCell& cell : cells) {
    if (cell.config.mode != TrainMode::Distill) continue;
    const std::string id = teacher_id(cell.config.featurizer, cell.config.seed);
    if (std::any_of(teachers.begin(), teachers.end(), [&](const GridCell& t) { return t.id == id; })) continue;
    GridCell t{id, cell.config};
    t.config.mode = TrainMode::Plain;
    t.config.model.kind = ModelKind::Teacher;
    teachers.push_back(std::move(t));
  }

  GridResult result;
  result.teachers.resize(teachers.size());
  result.students.resize(cells.size());
  const auto run = [&](const GridCell& cell, ExperimentRecord& slot, nn::Sequential<float>* teacher) {
    try {
      slot = run_experiment(dataset, cache, cell.config, out_dir / cell.id, cell.id, teacher, log).record;
    } catch (const Error& e) {
      slot = failed_record(cell.id, cell.config, e.what());
      log_line(log, "event=cell_failed cell=" + cell.id + " error=\"" + std::string(e.what()) + "\"");
      std::filesystem::create_directories(out_dir / cell.id);
      const std::string text = slot.to_json();
      write_file_atomic(out_dir / cell.id / "record.json", [&](std::ostream& os) { os << text; });
    }
  };

  parallel_for(teachers.size(), jobs, [&](std::size_t i) { run(teachers[i], result.teachers[i], nullptr); });
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const GridCell& cell = cells[i];
    std::unique_ptr<nn::Sequential<float>> teacher;
    if (cell.config.mode == TrainMode::Distill) {
      const std::string id = teacher_id(cell.config.featurizer, cell.config.seed);
      const auto it = std::find_if(result.teachers.begin(), result.teachers.end(),
                                   [&](const ExperimentRecord& r) { return r.cell_id == id; });
      if (it == result.teachers.end() || !it->completed) {
        result.students[i] = failed_record(cell.id, cell.config, "teacher " + id + " did not complete");
        return;
      }
      try {
        teacher = load_teacher(dataset, cell.config, it->checkpoint);
      } catch (const Error& e) {
        result.students[i] = failed_record(cell.id, cell.config, e.what());
        return;
      }
    }
    run(cell, result.students[i], teacher.get());
  });

  const std::string csv = grid_csv(result);
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "grid.csv", [&](std::ostream& os) { os << csv; });
  return result;
}

std::string grid_csv(const GridResult& result) {
  std::ostringstream out;
  out.precision(9);
  out << "cell_id,basis,level,featurizer,mode,seed,split,mde,std,cdf_1m,cdf_3m\n";
  const auto emit = [&](const ExperimentRecord& r) {
    const std::string level = r.featurizer == "wpd" ? std::to_string(r.level) : "";
    if (!r.completed) {
      out << r.cell_id << ',' << r.basis << ',' << level << ',' << r.featurizer << ',' << r.mode << ',' << r.seed
          << ",failed,,,,\n";
      return;
    }
    for (const auto& [split, m] : r.metrics) {
      out << r.cell_id << ',' << r.basis << ',' << level << ',' << r.featurizer << ',' << r.mode << ',' << r.seed << ','
          << split << ',' << m.mde << ',' << m.std << ',' << m.cdf_1m << ',' << m.cdf_3m << '\n';
    }
  };
  for (const ExperimentRecord& r : result.teachers) emit(r);
  for (const ExperimentRecord& r : result.students) emit(r);
  return out.str();
}

}  // namespace wkpnet::pipeline
