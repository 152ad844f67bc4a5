#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "wkpnet/nn/layers.hpp"

namespace wkpnet::models {

struct Conv2dSpec {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int groups = 1;
  bool bias = true;
};
struct BatchNormSpec {
  int channels = 0;
};
struct ReLUSpec {};
struct SigmoidSpec {};
struct MaxPoolSpec {
  int kh = 1;
  int kw = 2;
};
struct AdaptiveAvgPoolSpec {};
struct FlattenSpec {};
struct LinearSpec {
  int in = 0;
  int out = 0;
};
struct SpatialAttentionSpec {
  int kernel = 7;
};
struct ResNeXtBlockSpec {
  int in = 0;
  int mid = 0;
  int out = 0;
  int groups = 1;
  int stride = 1;
};

using LayerKind = std::variant<Conv2dSpec, BatchNormSpec, ReLUSpec, SigmoidSpec, MaxPoolSpec, AdaptiveAvgPoolSpec,
                               FlattenSpec, LinearSpec, SpatialAttentionSpec, ResNeXtBlockSpec>;

struct LayerSpec {
  std::string label;
  LayerKind kind;
};

std::string kind_name(const LayerKind& kind);
/// Learnable parameter count implied by the layer description alone.
std::uint64_t spec_parameter_count(const LayerKind& kind);

struct ModelGraph {
  std::string name;
  std::vector<LayerSpec> layers;
  /// (1, planes, height, width): batch extent is a placeholder.
  nn::Shape input_shape{1, 2, 128, 32};
  int num_classes = 0;

  /// Output shape after each layer for the given input; throws Shape on mismatch.
  std::vector<nn::Shape> shape_trace(const nn::Shape& input) const;
  std::vector<nn::Shape> shape_trace() const { return shape_trace(input_shape); }
};

ModelGraph build_student(int num_classes, int width_multiplier = 1, nn::Shape input = {1, 2, 128, 32});

struct TeacherOptions {
  std::array<int, 4> depth{3, 4, 5, 3};
  int base_width = 64;
  int cardinality = 32;
  /// Width multiplier in {1, 1/2, 1/4}. Cardinality scales with it so each group keeps its width.
  double scale = 1.0;
};

ModelGraph build_teacher(int num_classes, const TeacherOptions& options = {}, nn::Shape input = {1, 2, 128, 32});

template <typename Real>
std::unique_ptr<nn::Sequential<Real>> instantiate(const ModelGraph& graph);

enum class MacConvention { One = 1, Two = 2 };

struct LayerComplexity {
  std::string label;
  std::string kind;
  nn::Shape output;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

/// Conv and linear layers contribute multiply-accumulates (doubled under MAC=2); BN,
/// activations, pools and residual adds contribute one op per element.
struct ComplexityReport {
  MacConvention convention = MacConvention::One;
  std::vector<LayerComplexity> layers;
  std::uint64_t total_params = 0;
  std::uint64_t total_flops = 0;

  std::string render() const;
};

ComplexityReport count_complexity(const ModelGraph& graph, const nn::Shape& input,
                                  MacConvention convention = MacConvention::One);
inline ComplexityReport count_complexity(const ModelGraph& graph, MacConvention convention = MacConvention::One) {
  return count_complexity(graph, graph.input_shape, convention);
}

struct CheckpointInfo {
  std::string graph_name;
  std::uint32_t layer_count = 0;
  std::uint32_t num_classes = 0;
  std::uint64_t config_hash = 0;
};

/// Header (magic, graph name, layer count, classes, config hash) followed by one record per
/// parameter and BN buffer: name, shape, float32 payload. Written atomically.
void write_checkpoint(const std::filesystem::path& path, const ModelGraph& graph, nn::Layer<float>& model,
                      std::uint64_t config_hash);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Loads into a model instantiated from `graph`; every record name and shape must match.
/// Returns the header so callers can check the config hash.
CheckpointInfo read_checkpoint(const std::filesystem::path& path, const ModelGraph& graph, nn::Layer<float>& model);

}  // namespace wkpnet::models
