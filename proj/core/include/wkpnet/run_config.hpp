#pragma once

#include <cstdint>
#include <string>

#include "wkpnet/pipeline.hpp"
#include "wkpnet/signalgen.hpp"

namespace wkpnet {

/// Everything a CLI verb needs, loaded from one JSON file. Missing keys keep their
/// defaults; unknown keys are rejected.
struct RunConfig {
  /// Master seed: the generator seed for gen-dataset and the training seed for the
  /// train verbs. Grid cells use seed, seed + 1, ... seed + grid_seed_count - 1.
  std::uint64_t seed = 1;
  std::string dataset_dir = "data";
  std::string output_dir = "runs";
  std::string teacher_checkpoint;
  signal::GeneratorConfig generator;
  pipeline::TrainConfig train;
  pipeline::GridSpec grid;
  int grid_seed_count = 1;
  int cdf_points = 200;
  int jobs = 1;

  /// Pushes `seed` into the generator and training sections.
  void apply_seed(std::uint64_t value);
  void validate() const;
  pipeline::GridSpec grid_spec() const;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  std::uint64_t hash() const;
};

/// Human-readable description of every key, its type and default.
std::string run_config_schema();

}  // namespace wkpnet
