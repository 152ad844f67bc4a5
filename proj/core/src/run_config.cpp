#include "wkpnet/run_config.hpp"

#include <set>
#include <sstream>

#include <json.hpp>

#include "wkpnet/seeding.hpp"

namespace wkpnet {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  require(j.is_object(), ErrorKind::Configuration, where + " must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    require(keys.count(item.key()) > 0, ErrorKind::Configuration, "unknown key " + where + "." + item.key());
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json featurizer_json(const pipeline::FeaturizerConfig& f) {
  return {{"kind", pipeline::to_string(f.kind)},
          {"basis", f.basis.name()},
          {"level", f.level},
          {"order", f.order == wavelet::NodeOrder::Frequency ? "frequency" : "natural"},
          {"fft_size", f.stft.fft_size},
          {"overlap", f.stft.overlap}};
}

pipeline::FeaturizerKind parse_featurizer_kind(const std::string& s) {
  if (s == "wpd") return pipeline::FeaturizerKind::Wpd;
  if (s == "stft") return pipeline::FeaturizerKind::Stft;
  fail(ErrorKind::Configuration, "unknown featurizer " + s);
}

pipeline::TrainMode parse_mode(const std::string& s) {
  if (s == "plain") return pipeline::TrainMode::Plain;
  if (s == "distill") return pipeline::TrainMode::Distill;
  fail(ErrorKind::Configuration, "unknown training mode " + s);
}

void featurizer_from(const json& j, pipeline::FeaturizerConfig& f) {
  check_keys(j, "featurizer", {"kind", "basis", "level", "order", "fft_size", "overlap"});
  if (j.contains("kind")) f.kind = parse_featurizer_kind(j.at("kind").get<std::string>());
  if (j.contains("basis")) f.basis = wavelet::WaveletFamily::parse(j.at("basis").get<std::string>());
  read(j, "level", f.level);
  if (j.contains("order")) {
    const std::string order = j.at("order").get<std::string>();
    require(order == "frequency" || order == "natural", ErrorKind::Configuration, "unknown node order " + order);
    f.order = order == "frequency" ? wavelet::NodeOrder::Frequency : wavelet::NodeOrder::Natural;
  }
  read(j, "fft_size", f.stft.fft_size);
  read(j, "overlap", f.stft.overlap);
}

json model_json(const pipeline::ModelConfig& m) {
  const auto& d = m.teacher.depth;
  return {{"kind", pipeline::to_string(m.kind)},
          {"width", m.width},
          {"teacher_scale", m.teacher.scale},
          {"teacher_depth", {d[0], d[1], d[2], d[3]}},
          {"teacher_base_width", m.teacher.base_width},
          {"teacher_cardinality", m.teacher.cardinality}};
}

void model_from(const json& j, pipeline::ModelConfig& m) {
  check_keys(j, "model",
             {"kind", "width", "teacher_scale", "teacher_depth", "teacher_base_width", "teacher_cardinality"});
  if (j.contains("kind")) {
    const std::string kind = j.at("kind").get<std::string>();
    require(kind == "student" || kind == "teacher", ErrorKind::Configuration, "unknown model kind " + kind);
    m.kind = kind == "student" ? pipeline::ModelKind::Student : pipeline::ModelKind::Teacher;
  }
  read(j, "width", m.width);
  read(j, "teacher_scale", m.teacher.scale);
  if (j.contains("teacher_depth")) {
    const auto depth = j.at("teacher_depth").get<std::vector<int>>();
    require(depth.size() == 4, ErrorKind::Configuration, "teacher_depth needs four stage block counts");
    std::copy(depth.begin(), depth.end(), m.teacher.depth.begin());
  }
  read(j, "teacher_base_width", m.teacher.base_width);
  read(j, "teacher_cardinality", m.teacher.cardinality);
}

json train_json(const pipeline::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr0", t.lr0},
          {"lr_halving_period", t.lr_halving_period},
          {"temperature", t.temperature},
          {"alpha", t.alpha},
          {"t_squared", t.t_squared},
          {"precompute_teacher_logits", t.precompute_teacher_logits},
          {"mode", pipeline::to_string(t.mode)},
          {"adamw",
           {{"beta1", t.optimizer.beta1},
            {"beta2", t.optimizer.beta2},
            {"eps", t.optimizer.eps},
            {"weight_decay", t.optimizer.weight_decay}}}};
}

void train_from(const json& j, pipeline::TrainConfig& t) {
  check_keys(j, "train",
             {"epochs", "batch_size", "lr0", "lr_halving_period", "temperature", "alpha", "t_squared", "precompute_teacher_logits", "mode", "adamw"});
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  read(j, "lr0", t.lr0);
  read(j, "lr_halving_period", t.lr_halving_period);
  read(j, "temperature", t.temperature);
  read(j, "alpha", t.alpha);
  read(j, "t_squared", t.t_squared);
  read(j, "precompute_teacher_logits", t.precompute_teacher_logits);
  if (j.contains("mode")) t.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("adamw")) {
    const json& a = j.at("adamw");
    check_keys(a, "train.adamw", {"beta1", "beta2", "eps", "weight_decay"});
    read(a, "beta1", t.optimizer.beta1);
    read(a, "beta2", t.optimizer.beta2);
    read(a, "eps", t.optimizer.eps);
    read(a, "weight_decay", t.optimizer.weight_decay);
  }
}

json generator_json(const signal::GeneratorConfig& g) {
  const signal::ChannelParams& c = g.channel;
  return {{"grid_rows", g.grid_rows},
          {"grid_cols", g.grid_cols},
          {"spacing_m", g.spacing_m},
          {"train_per_point", g.train_per_point},
          {"test_per_point", g.test_per_point},
          {"days", g.days},
          {"window_len", g.window_len},
          {"sample_rate", g.sample_rate},
          {"snr_min_db", g.snr_min_db},
          {"snr_max_db", g.snr_max_db},
          {"station_offsets_hz", g.station_offsets_hz},
          {"station_gains", g.station_gains},
          {"deviation_hz", g.deviation_hz},
          {"message_cutoff_hz", g.message_cutoff_hz},
          {"channel",
           {{"min_taps", c.min_taps},
            {"max_taps", c.max_taps},
            {"max_delay", c.max_delay},
            {"delay_decay", c.delay_decay},
            {"plane_waves", c.plane_waves},
            {"wavelength_m", c.wavelength_m},
            {"day_drift", c.day_drift}}}};
}

void generator_from(const json& j, signal::GeneratorConfig& g) {
  check_keys(j, "generator",
             {"grid_rows", "grid_cols", "spacing_m", "train_per_point", "test_per_point", "days", "window_len",
              "sample_rate", "snr_min_db", "snr_max_db", "station_offsets_hz", "station_gains", "deviation_hz",
              "message_cutoff_hz", "channel"});
  read(j, "grid_rows", g.grid_rows);
  read(j, "grid_cols", g.grid_cols);
  read(j, "spacing_m", g.spacing_m);
  read(j, "train_per_point", g.train_per_point);
  read(j, "test_per_point", g.test_per_point);
  read(j, "days", g.days);
  read(j, "window_len", g.window_len);
  read(j, "sample_rate", g.sample_rate);
  read(j, "snr_min_db", g.snr_min_db);
  read(j, "snr_max_db", g.snr_max_db);
  read(j, "station_offsets_hz", g.station_offsets_hz);
  read(j, "station_gains", g.station_gains);
  read(j, "deviation_hz", g.deviation_hz);
  read(j, "message_cutoff_hz", g.message_cutoff_hz);
  if (j.contains("channel")) {
    const json& c = j.at("channel");
    check_keys(c, "generator.channel",
               {"min_taps", "max_taps", "max_delay", "delay_decay", "plane_waves", "wavelength_m", "day_drift"});
    read(c, "min_taps", g.channel.min_taps);
    read(c, "max_taps", g.channel.max_taps);
    read(c, "max_delay", g.channel.max_delay);
    read(c, "delay_decay", g.channel.delay_decay);
    read(c, "plane_waves", g.channel.plane_waves);
    read(c, "wavelength_m", g.channel.wavelength_m);
    read(c, "day_drift", g.channel.day_drift);
  }
}

json grid_json(const pipeline::GridSpec& g, int seed_count) {
  json featurizers = json::array();
  for (auto k : g.featurizers) featurizers.push_back(pipeline::to_string(k));
  json bases = json::array();
  for (const auto& b : g.bases) bases.push_back(b.name());
  json modes = json::array();
  for (auto m : g.modes) modes.push_back(pipeline::to_string(m));
  return {{"featurizers", featurizers}, {"bases", bases}, {"levels", g.levels}, {"modes", modes},
          {"seed_count", seed_count}};
}

void grid_from(const json& j, pipeline::GridSpec& g, int& seed_count) {
  check_keys(j, "grid", {"featurizers", "bases", "levels", "modes", "seed_count"});
  if (j.contains("featurizers")) {
    g.featurizers.clear();
    for (const auto& s : j.at("featurizers").get<std::vector<std::string>>()) g.featurizers.push_back(parse_featurizer_kind(s));
  }
  if (j.contains("bases")) {
    g.bases.clear();
    for (const auto& s : j.at("bases").get<std::vector<std::string>>()) g.bases.push_back(wavelet::WaveletFamily::parse(s));
  }
  read(j, "levels", g.levels);
  if (j.contains("modes")) {
    g.modes.clear();
    for (const auto& s : j.at("modes").get<std::vector<std::string>>()) g.modes.push_back(parse_mode(s));
  }
  read(j, "seed_count", seed_count);
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t value) {
  seed = value;
  generator.seed = value;
  train.seed = value;
}

void RunConfig::validate() const {
  generator.validate();
  train.validate();
  require(grid_seed_count >= 1, ErrorKind::Configuration, "grid.seed_count must be at least 1");
  require(!grid.featurizers.empty() && !grid.modes.empty(), ErrorKind::Configuration,
          "grid needs featurizers and modes");
  require(cdf_points >= 2, ErrorKind::Configuration, "evaluation.cdf_points must be at least 2");
  require(jobs >= 1, ErrorKind::Configuration, "jobs must be at least 1");
  for (const auto& b : grid.bases) wavelet::build_filter_bank(b);
  wavelet::build_filter_bank(train.featurizer.basis);
}

pipeline::GridSpec RunConfig::grid_spec() const {
  pipeline::GridSpec spec = grid;
  spec.base = train;
  spec.seeds.clear();
  for (int k = 0; k < grid_seed_count; ++k) spec.seeds.push_back(seed + static_cast<std::uint64_t>(k));
  return spec;
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["jobs"] = jobs;
  j["paths"] = {{"dataset", dataset_dir}, {"output", output_dir}, {"teacher_checkpoint", teacher_checkpoint}};
  json g = generator_json(generator);
  j["generator"] = g;
  j["featurizer"] = featurizer_json(train.featurizer);
  j["model"] = model_json(train.model);
  j["train"] = train_json(train);
  j["grid"] = grid_json(grid, grid_seed_count);
  j["evaluation"] = {{"cdf_points", cdf_points}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j, "config",
               {"seed", "jobs", "paths", "generator", "featurizer", "model", "train", "grid", "evaluation"});
    read(j, "seed", c.seed);
    read(j, "jobs", c.jobs);
    if (j.contains("paths")) {
      const json& p = j.at("paths");
      check_keys(p, "paths", {"dataset", "output", "teacher_checkpoint"});
      read(p, "dataset", c.dataset_dir);
      read(p, "output", c.output_dir);
      read(p, "teacher_checkpoint", c.teacher_checkpoint);
    }
    if (j.contains("generator")) generator_from(j.at("generator"), c.generator);
    if (j.contains("featurizer")) featurizer_from(j.at("featurizer"), c.train.featurizer);
    if (j.contains("model")) model_from(j.at("model"), c.train.model);
    if (j.contains("train")) train_from(j.at("train"), c.train);
    if (j.contains("grid")) grid_from(j.at("grid"), c.grid, c.grid_seed_count);
    if (j.contains("evaluation")) {
      check_keys(j.at("evaluation"), "evaluation", {"cdf_points"});
      read(j.at("evaluation"), "cdf_points", c.cdf_points);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Configuration, std::string("invalid config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::UnsupportedFamily) fail(ErrorKind::Configuration, e.what());
    throw;
  }
  c.apply_seed(c.seed);
  return c;
}

std::uint64_t RunConfig::hash() const { return fnv1a(to_json()); }

namespace pipeline {
std::string config_to_json(const TrainConfig& config) {
  json j;
  j["seed"] = config.seed;
  j["featurizer"] = featurizer_json(config.featurizer);
  j["model"] = model_json(config.model);
  j["train"] = train_json(config);
  return j.dump();
}
}  // namespace pipeline

std::string run_config_schema() {
  std::ostringstream out;
  out << "# wkpnet run config (JSON). Missing keys take the defaults shown; unknown keys are errors.\n"
         "#\n"
         "# seed                      uint    master seed (generator and training); --seed overrides\n"
         "# jobs                      int     worker threads for gen-dataset and grid; --jobs overrides\n"
         "# paths.dataset             string  dataset directory (gen-dataset output, training input)\n"
         "# paths.output              string  run directory for checkpoints, records and tables; --out overrides\n"
         "# paths.teacher_checkpoint  string  teacher weights for distill\n"
         "# generator.*                       synthetic FM dataset; channel.* shapes the multipath field\n"
         "# featurizer.kind           string  wpd | stft\n"
         "# featurizer.basis          string  haar, dbN, symN, coifN, biorP.Q, rbioP.Q\n"
         "# featurizer.order          string  frequency | natural (WPD node order)\n"
         "# model.kind                string  student | teacher\n"
         "# model.teacher_scale       number  width multiplier for the teacher (1, 0.5, 0.25)\n"
         "# train.mode                string  plain | distill\n"
         "# train.t_squared           bool    scale the KL term by T^2\n"
         "# train.precompute_teacher_logits bool  run the frozen teacher once per example, not per batch\n"
         "# grid.*                            cartesian product; cells use seeds seed .. seed+seed_count-1\n"
         "# evaluation.cdf_points     int     CDF lattice size\n"
         "#\n"
         "# Defaults:\n";
  out << RunConfig{}.to_json();
  return out.str();
}

}  // namespace wkpnet
