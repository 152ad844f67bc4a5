#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>

#include "wkpnet/error.hpp"
#include "wkpnet/fileutil.hpp"
#include "wkpnet/locate.hpp"
#include "wkpnet/models.hpp"
#include "wkpnet/pipeline.hpp"
#include "wkpnet/run_config.hpp"
#include "wkpnet/signalgen.hpp"

namespace wkpnet::cli {
namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dataset;
  bool overwrite = false;
  std::optional<int> jobs;
};

struct Invocation {
  CommonOptions common;
  std::string teacher;
  std::string checkpoint;
  std::string model;
  int classes = 100;
  int mac = 1;
  double teacher_scale = 1.0;
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Configuration:
    case ErrorKind::Parameter:
    case ErrorKind::UnsupportedFamily:
      return kConfigError;
    case ErrorKind::RejectedInput:
    case ErrorKind::Shape:
    case ErrorKind::EmptySet:
    case ErrorKind::DegenerateBatch:
    case ErrorKind::Io:
      return kDataError;
    case ErrorKind::Divergence:
      return kDivergence;
    case ErrorKind::Incompatibility:
      return kIncompatible;
    case ErrorKind::Refusal:
      return kRefused;
  }
  return kInternal;
}

RunConfig load_config(const CommonOptions& opts) {
  RunConfig cfg;
  if (!opts.config.empty()) cfg = RunConfig::from_json(read_text_file(opts.config));
  if (opts.seed) cfg.apply_seed(*opts.seed);
  if (opts.jobs) cfg.jobs = *opts.jobs;
  cfg.validate();
  return cfg;
}

fs::path dataset_dir(const CommonOptions& opts, const RunConfig& cfg) {
  return opts.dataset.empty() ? fs::path(cfg.dataset_dir) : fs::path(opts.dataset);
}

fs::path output_dir(const CommonOptions& opts, const RunConfig& cfg) {
  return opts.out.empty() ? fs::path(cfg.output_dir) : fs::path(opts.out);
}

void refuse_existing(const fs::path& dir, std::initializer_list<const char*> files, bool overwrite) {
  if (overwrite) return;
  for (const char* name : files) {
    require(!fs::exists(dir / name), ErrorKind::Refusal,
            (dir / name).string() + " already exists; pass --overwrite to replace it");
  }
}

void save_resolved_config(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  const std::string text = cfg.to_json();
  write_file_atomic(dir / "config.json", [&](std::ostream& os) { os << text << '\n'; });
}

int gen_dataset(const Invocation& inv, std::ostream&, const pipeline::Logger& log) {
  const RunConfig cfg = load_config(inv.common);
  const fs::path target = inv.common.out.empty() ? fs::path(cfg.dataset_dir) : fs::path(inv.common.out);
  const signal::DatasetManifest manifest = signal::generate_dataset(cfg.generator, target, inv.common.overwrite, cfg.jobs);
  log("event=dataset_written dir=" + target.string() + " examples=" + std::to_string(manifest.examples.size()) +
      " points=" + std::to_string(manifest.points.size()) + " manifest_hash=" + signal::hex64(manifest.hash()));
  return kOk;
}

int train_verb(const std::string& verb, const Invocation& inv, std::ostream&, const pipeline::Logger& log) {
  const RunConfig cfg = load_config(inv.common);
  const fs::path out = output_dir(inv.common, cfg);
  refuse_existing(out, {"model.ckpt", "record.json"}, inv.common.overwrite);

  pipeline::TrainConfig train = cfg.train;
  train.mode = pipeline::TrainMode::Plain;
  train.model.kind = pipeline::ModelKind::Student;
  if (verb == "train-teacher") train.model.kind = pipeline::ModelKind::Teacher;
  if (verb == "distill") train.mode = pipeline::TrainMode::Distill;

  const pipeline::Dataset dataset = pipeline::Dataset::open(dataset_dir(inv.common, cfg));
  std::unique_ptr<nn::Sequential<float>> teacher;
  if (train.mode == pipeline::TrainMode::Distill) {
    const std::string path = inv.teacher.empty() ? cfg.teacher_checkpoint : inv.teacher;
    require(!path.empty(), ErrorKind::Configuration, "distill needs a teacher checkpoint (--teacher or paths.teacher_checkpoint)");
    teacher = pipeline::load_teacher(dataset, train, path);
  }

  save_resolved_config(out, cfg);
  pipeline::FeatureCache cache(dataset, cfg.jobs);
  const pipeline::ExperimentOutcome outcome = pipeline::run_experiment(dataset, cache, train, out, verb, teacher.get(), log);
  log("event=done verb=" + verb + " checkpoint=" + outcome.record.checkpoint);
  return kOk;
}

int grid_verb(const Invocation& inv, std::ostream&, const pipeline::Logger& log) {
  const RunConfig cfg = load_config(inv.common);
  const fs::path out = output_dir(inv.common, cfg);
  refuse_existing(out, {"grid.csv"}, inv.common.overwrite);
  const pipeline::Dataset dataset = pipeline::Dataset::open(dataset_dir(inv.common, cfg));
  save_resolved_config(out, cfg);
  const pipeline::GridResult result = pipeline::run_experiment_grid(dataset, cfg.grid_spec(), out, cfg.jobs, log);
  std::size_t failed = 0;
  for (const auto* group : {&result.teachers, &result.students}) {
    failed += static_cast<std::size_t>(
        std::count_if(group->begin(), group->end(), [](const pipeline::ExperimentRecord& r) { return !r.completed; }));
  }
  log("event=grid_done cells=" + std::to_string(result.teachers.size() + result.students.size()) +
      " failed=" + std::to_string(failed) + " table=" + (out / "grid.csv").string());
  return kOk;
}

int evaluate_verb(const Invocation& inv, std::ostream&, const pipeline::Logger& log) {
  const RunConfig cfg = load_config(inv.common);
  const fs::path out = output_dir(inv.common, cfg);
  refuse_existing(out, {"evaluation.json"}, inv.common.overwrite);
  require(!inv.checkpoint.empty(), ErrorKind::Configuration, "evaluate needs --checkpoint");

  const pipeline::Dataset dataset = pipeline::Dataset::open(dataset_dir(inv.common, cfg));
  pipeline::ModelConfig model = cfg.train.model;
  if (!inv.model.empty()) model.kind = inv.model == "teacher" ? pipeline::ModelKind::Teacher : pipeline::ModelKind::Student;

  const models::CheckpointInfo info = models::read_checkpoint_info(inv.checkpoint);
  require(info.config_hash == pipeline::compatibility_hash(dataset.manifest, cfg.train.featurizer),
          ErrorKind::Incompatibility,
          "checkpoint " + inv.checkpoint + " was trained on a different dataset or featurizer");
  const models::ModelGraph graph = pipeline::build_model(
      model, dataset.num_classes(), cfg.train.featurizer.feature_shape(dataset.manifest.window_len));
  auto net = models::instantiate<float>(graph);
  models::read_checkpoint(inv.checkpoint, graph, *net);

  fs::create_directories(out);
  std::ostringstream summary;
  summary << "{\n  \"checkpoint\": \"" << inv.checkpoint << "\",\n  \"splits\": {";
  pipeline::FeatureCache cache(dataset, cfg.jobs);
  bool first = true;
  for (int day = 1; day <= 3; ++day) {
    const signal::Split split = signal::test_split_for_day(day);
    if (dataset.manifest.indices_of(split).empty()) continue;
    const auto set = cache.get(split, cfg.train.featurizer);
    const pipeline::Evaluation ev = pipeline::evaluate(*net, *set, dataset.coords);
    const locate::MetricsSummary metrics = locate::summarize(ev.estimates, cfg.cdf_points);
    const std::string name = signal::to_string(split);
    write_file_atomic(out / ("metrics_" + name + ".csv"), [&](std::ostream& os) { locate::write_metrics_csv(os, metrics); });
    summary.precision(9);
    summary << (first ? "" : ",") << "\n    \"" << name << "\": {\"mde\": " << metrics.mde << ", \"std\": " << metrics.std
            << ", \"cdf_1m\": " << metrics.cdf_at(1.0) << ", \"cdf_3m\": " << metrics.cdf_at(3.0)
            << ", \"accuracy\": " << ev.accuracy << "}";
    first = false;
    std::ostringstream line;
    line << "event=evaluate split=" << name << " mde=" << metrics.mde << " std=" << metrics.std << " acc=" << ev.accuracy;
    log(line.str());
  }
  summary << "\n  }\n}\n";
  const std::string text = summary.str();
  write_file_atomic(out / "evaluation.json", [&](std::ostream& os) { os << text; });
  return kOk;
}

int complexity_verb(const Invocation& inv, std::ostream& out, const pipeline::Logger& log) {
  const RunConfig cfg = load_config(inv.common);
  require(inv.classes >= 2, ErrorKind::Parameter, "--classes must be at least 2");
  require(inv.mac == 1 || inv.mac == 2, ErrorKind::Parameter, "--mac must be 1 or 2");
  const nn::Shape input = cfg.train.featurizer.feature_shape(cfg.generator.window_len);
  pipeline::ModelConfig model = cfg.train.model;
  model.kind = inv.model == "teacher" ? pipeline::ModelKind::Teacher : pipeline::ModelKind::Student;
  model.teacher.scale = inv.teacher_scale;
  const models::ModelGraph graph = pipeline::build_model(model, inv.classes, input);
  const models::ComplexityReport report = models::count_complexity(
      graph, input, inv.mac == 2 ? models::MacConvention::Two : models::MacConvention::One);
  const std::string text = report.render();
  out << text;
  if (!inv.common.out.empty()) {
    const fs::path path = inv.common.out;
    require(inv.common.overwrite || !fs::exists(path), ErrorKind::Refusal,
            path.string() + " already exists; pass --overwrite to replace it");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, [&](std::ostream& os) { os << text; });
  }
  log("event=complexity model=" + graph.name + " params=" + std::to_string(report.total_params) +
      " flops=" + std::to_string(report.total_flops));
  return kOk;
}

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "master seed (overrides the config)");
  cmd->add_option("--out", opts.out, "output location (overrides the config)");
  cmd->add_option("--dataset", opts.dataset, "dataset directory (overrides the config)");
  cmd->add_flag("--overwrite", opts.overwrite, "replace existing outputs");
  cmd->add_option("--jobs", opts.jobs, "worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"WK-Pnet FM fingerprint positioning", "wkpnet"};
  app.require_subcommand(0, 1);
  bool print_schema = false;
  app.add_flag("--print-schema", print_schema, "describe every configuration key and exit");

  Invocation inv;
  std::map<std::string, CLI::App*> commands;
  commands["gen-dataset"] = app.add_subcommand("gen-dataset", "generate a synthetic IQ dataset");
  commands["train-teacher"] = app.add_subcommand("train-teacher", "train the attention ResNeXt teacher");
  commands["distill"] = app.add_subcommand("distill", "train the student against a frozen teacher");
  commands["train-plain"] = app.add_subcommand("train-plain", "train the student on hard labels only");
  commands["grid"] = app.add_subcommand("grid", "run the featurizer x basis x level x mode x seed grid");
  commands["evaluate"] = app.add_subcommand("evaluate", "evaluate a checkpoint on every test split");
  commands["complexity"] = app.add_subcommand("complexity", "print per-layer params and flops");
  for (const auto& [name, cmd] : commands) add_common(cmd, inv.common);
  commands["distill"]->add_option("--teacher", inv.teacher, "teacher checkpoint");
  commands["evaluate"]->add_option("--checkpoint", inv.checkpoint, "checkpoint to evaluate")->required();
  commands["evaluate"]->add_option("--model", inv.model, "student or teacher")->check(CLI::IsMember({"student", "teacher"}));
  commands["complexity"]->add_option("--model", inv.model, "student or teacher")
      ->check(CLI::IsMember({"student", "teacher"}))
      ->default_val("student");
  commands["complexity"]->add_option("--classes", inv.classes, "number of reference points")->default_val(100);
  commands["complexity"]->add_option("--mac", inv.mac, "operations per multiply-accumulate (1 or 2)")->default_val(1);
  commands["complexity"]->add_option("--teacher-scale", inv.teacher_scale, "teacher width multiplier")->default_val(1.0);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error=usage message=\"" << e.what() << "\"\n";
    return kUsage;
  }

  if (print_schema) {
    out << run_config_schema();
    return kOk;
  }

  std::mutex log_mutex;
  const pipeline::Logger log = [&](const std::string& line) {
    std::lock_guard lock(log_mutex);
    err << line << '\n';
  };

  std::string verb;
  for (const auto& [name, cmd] : commands) {
    if (cmd->parsed()) verb = name;
  }
  if (verb.empty()) {
    err << "error=usage message=\"a verb is required: gen-dataset, train-teacher, distill, train-plain, grid, "
           "evaluate, complexity\"\n";
    return kUsage;
  }

  try {
    if (verb == "gen-dataset") return gen_dataset(inv, out, log);
    if (verb == "grid") return grid_verb(inv, out, log);
    if (verb == "evaluate") return evaluate_verb(inv, out, log);
    if (verb == "complexity") return complexity_verb(inv, out, log);
    return train_verb(verb, inv, out, log);
  } catch (const Error& e) {
    err << "error=" << to_string(e.kind()) << " verb=" << verb << " message=\"" << e.what() << "\"\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error=internal verb=" << verb << " message=\"" << e.what() << "\"\n";
    return kInternal;
  }
}

}  // namespace wkpnet::cli
