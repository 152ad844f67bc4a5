#include "wkpnet/models.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wkpnet/binary_io.hpp"
#include "wkpnet/fileutil.hpp"

namespace wkpnet::models {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

constexpr char kCheckpointMagic[4] = {'W', 'K', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

int conv_extent(int in, int kernel, int stride, int padding) { return (in + 2 * padding - kernel) / stride + 1; }

void require_channels(const nn::Shape& s, int expected, const std::string& what) {
  require(s.c == expected, ErrorKind::Shape,
          what + " expects " + std::to_string(expected) + " channels, got " + std::to_string(s.c));
}

nn::Shape propagate(const LayerKind& kind, const nn::Shape& s) {
  return std::visit(
      Overloaded{
          [&](const Conv2dSpec& c) {
            require_channels(s, c.in, "conv2d");
            require(c.groups > 0 && c.in % c.groups == 0 && c.out % c.groups == 0, ErrorKind::Parameter,
                    "conv2d channels must be divisible by groups");
            const int h = conv_extent(s.h, c.kernel, c.stride, c.padding);
            const int w = conv_extent(s.w, c.kernel, c.stride, c.padding);
            require(s.h + 2 * c.padding >= c.kernel && s.w + 2 * c.padding >= c.kernel && h > 0 && w > 0,
                    ErrorKind::Shape, "conv2d input " + s.str() + " too small");
            return nn::Shape{s.n, c.out, h, w};
          },
          [&](const BatchNormSpec& b) {
            require_channels(s, b.channels, "batchnorm");
            return s;
          },
          [&](const ReLUSpec&) { return s; },
          [&](const SigmoidSpec&) { return s; },
          [&](const MaxPoolSpec& p) {
            require(s.h >= p.kh && s.w >= p.kw, ErrorKind::Shape, "max pool window larger than " + s.str());
            return nn::Shape{s.n, s.c, s.h / p.kh, s.w / p.kw};
          },
          [&](const AdaptiveAvgPoolSpec&) { return nn::Shape{s.n, s.c, 1, 1}; },
          [&](const FlattenSpec&) { return nn::Shape{s.n, s.c * s.h * s.w, 1, 1}; },
          [&](const LinearSpec& l) {
            require(s.c * s.h * s.w == l.in, ErrorKind::Shape,
                    "linear expects " + std::to_string(l.in) + " features, got " + s.str());
            return nn::Shape{s.n, l.out, 1, 1};
          },
          [&](const SpatialAttentionSpec&) { return s; },
          [&](const ResNeXtBlockSpec& b) {
            require_channels(s, b.in, "bottleneck");
            require(b.groups > 0 && b.mid % b.groups == 0, ErrorKind::Parameter,
                    "cardinality " + std::to_string(b.groups) + " does not divide width " + std::to_string(b.mid));
            return nn::Shape{s.n, b.out, conv_extent(s.h, 3, b.stride, 1), conv_extent(s.w, 3, b.stride, 1)};
          },
      },
      kind);
}

std::uint64_t conv_params(std::uint64_t in, std::uint64_t out, std::uint64_t k, std::uint64_t groups, bool bias) {
  return out * (in / groups) * k * k + (bias ? out : 0);
}

std::uint64_t elements(const nn::Shape& s) {
  return static_cast<std::uint64_t>(s.c) * static_cast<std::uint64_t>(s.h) * static_cast<std::uint64_t>(s.w);
}

std::string format_scale(double scale) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", scale);
  return buf;
}

}  // namespace

std::string kind_name(const LayerKind& kind) {
  return std::visit(Overloaded{
                        [](const Conv2dSpec&) { return std::string("Conv2d"); },
                        [](const BatchNormSpec&) { return std::string("BatchNorm"); },
                        [](const ReLUSpec&) { return std::string("ReLU"); },
                        [](const SigmoidSpec&) { return std::string("Sigmoid"); },
                        [](const MaxPoolSpec&) { return std::string("MaxPool"); },
                        [](const AdaptiveAvgPoolSpec&) { return std::string("AdaptiveAvgPool"); },
                        [](const FlattenSpec&) { return std::string("Flatten"); },
                        [](const LinearSpec&) { return std::string("Linear"); },
                        [](const SpatialAttentionSpec&) { return std::string("SpatialAttention"); },
                        [](const ResNeXtBlockSpec&) { return std::string("ResNeXtBlock"); },
                    },
                    kind);
}

std::uint64_t spec_parameter_count(const LayerKind& kind) {
  return std::visit(
      Overloaded{
          [](const Conv2dSpec& c) { return conv_params(c.in, c.out, c.kernel, c.groups, c.bias); },
          [](const BatchNormSpec& b) { return 2 * static_cast<std::uint64_t>(b.channels); },
          [](const LinearSpec& l) { return static_cast<std::uint64_t>(l.in) * l.out + l.out; },
          [](const SpatialAttentionSpec& a) { return conv_params(2, 1, a.kernel, 1, true); },
          [](const ResNeXtBlockSpec& b) {
            std::uint64_t n = conv_params(b.in, b.mid, 1, 1, false) + 2 * b.mid;
            n += conv_params(b.mid, b.mid, 3, b.groups, false) + 2 * b.mid;
            n += conv_params(b.mid, b.out, 1, 1, false) + 2 * b.out;
            if (b.stride != 1 || b.in != b.out) n += conv_params(b.in, b.out, 1, 1, false) + 2 * b.out;
            return n;
          },
          [](const auto&) { return std::uint64_t{0}; },
      },
      kind);
}

std::vector<nn::Shape> ModelGraph::shape_trace(const nn::Shape& input) const {
  std::vector<nn::Shape> trace;
  trace.reserve(layers.size());
  nn::Shape s = input;
  for (const LayerSpec& layer : layers) {
    s = propagate(layer.kind, s);
    trace.push_back(s);
  }
  return trace;
}

ModelGraph build_student(int num_classes, int width_multiplier, nn::Shape input) {
  require(num_classes >= 2, ErrorKind::Parameter, "a classifier needs at least 2 classes");
  require(width_multiplier >= 1, ErrorKind::Parameter, "width multiplier must be a positive integer");
  ModelGraph g;
  g.name = "student-w" + std::to_string(width_multiplier);
  g.input_shape = input;
  g.num_classes = num_classes;
  int channels = input.c;
  const int widths[3] = {32, 64, 128};
  for (int i = 0; i < 3; ++i) {
    const int width = widths[i] * width_multiplier;
    const std::string block = "block" + std::to_string(i + 1);
    g.layers.push_back({block + ".conv", Conv2dSpec{channels, width, 3, 1, 1, 1, true}});
    g.layers.push_back({block + ".bn", BatchNormSpec{width}});
    g.layers.push_back({block + ".relu", ReLUSpec{}});
    g.layers.push_back({block + ".pool", MaxPoolSpec{1, 2}});
    channels = width;
  }
  g.layers.push_back({"gap", AdaptiveAvgPoolSpec{}});
  g.layers.push_back({"flatten", FlattenSpec{}});
  g.layers.push_back({"fc", LinearSpec{channels, num_classes}});
  g.shape_trace();
  return g;
}

ModelGraph build_teacher(int num_classes, const TeacherOptions& options, nn::Shape input) {
  require(num_classes >= 2, ErrorKind::Parameter, "a classifier needs at least 2 classes");
  require(options.scale > 0.0 && options.scale <= 1.0, ErrorKind::Parameter, "teacher scale must lie in (0, 1]");
  const auto scaled = [&](int width, const char* what) {
    const double v = width * options.scale;
    const int r = static_cast<int>(std::lround(v));
    require(r >= 1 && std::abs(v - r) < 1e-9, ErrorKind::Parameter,
            std::string(what) + " " + std::to_string(width) + " is not divisible by scale " + format_scale(options.scale));
    return r;
  };
  for (int d : options.depth) require(d >= 1, ErrorKind::Parameter, "every stage needs at least one block");
  const int base = scaled(options.base_width, "base width");
  const int cardinality = scaled(options.cardinality, "cardinality");

  ModelGraph g;
  g.name = "teacher-s" + format_scale(options.scale) + "-d" + std::to_string(options.depth[0]) +
           std::to_string(options.depth[1]) + std::to_string(options.depth[2]) + std::to_string(options.depth[3]) +
           "-b" + std::to_string(options.base_width) + "-c" + std::to_string(options.cardinality);
  g.input_shape = input;
  g.num_classes = num_classes;
  g.layers.push_back({"attention", SpatialAttentionSpec{7}});
  g.layers.push_back({"conv1", Conv2dSpec{input.c, base, 3, 1, 1, 1, false}});
  g.layers.push_back({"conv1.bn", BatchNormSpec{base}});
  g.layers.push_back({"conv1.relu", ReLUSpec{}});
  int channels = base;
  for (int stage = 0; stage < 4; ++stage) {
    const int mid = base << stage;
    const int out = 2 * mid;
    require(mid % cardinality == 0, ErrorKind::Parameter,
            "cardinality " + std::to_string(cardinality) + " does not divide width " + std::to_string(mid));
    for (int b = 0; b < options.depth[stage]; ++b) {
      const int stride = (b == 0 && stage > 0) ? 2 : 1;
      g.layers.push_back({"conv" + std::to_string(stage + 2) + "." + std::to_string(b),
                          ResNeXtBlockSpec{channels, mid, out, cardinality, stride}});
      channels = out;
    }
  }
  g.layers.push_back({"gap", AdaptiveAvgPoolSpec{}});
  g.layers.push_back({"flatten", FlattenSpec{}});
  g.layers.push_back({"fc", LinearSpec{channels, num_classes}});
  g.shape_trace();
  return g;
}

template <typename Real>
std::unique_ptr<nn::Sequential<Real>> instantiate(const ModelGraph& graph) {
  graph.shape_trace();
  auto model = std::make_unique<nn::Sequential<Real>>();
  for (const LayerSpec& layer : graph.layers) {
    std::unique_ptr<nn::Layer<Real>> built = std::visit(
        Overloaded{
            [](const Conv2dSpec& c) -> std::unique_ptr<nn::Layer<Real>> {
              return std::make_unique<nn::Conv2d<Real>>(c.in, c.out, c.kernel, c.stride, c.padding, c.groups, c.bias);
            },
            [](const BatchNormSpec& b) -> std::unique_ptr<nn::Layer<Real>> {
              return std::make_unique<nn::BatchNorm2d<Real>>(b.channels);
            },
            [](const ReLUSpec&) -> std::unique_ptr<nn::Layer<Real>> { return std::make_unique<nn::ReLU<Real>>(); },
            [](const SigmoidSpec&) -> std::unique_ptr<nn::Layer<Real>> {
              return std::make_unique<nn::Sigmoid<Real>>();
            },
            [](const MaxPoolSpec& p) -> std::unique_ptr<nn::Layer<Real>> {
              return std::make_unique<nn::MaxPool2d<Real>>(p.kh, p.kw);
            },
            [](const AdaptiveAvgPoolSpec&) -> std::unique_ptr<nn::Layer<Real>> {
              return std::make_unique<nn::AdaptiveAvgPool<Real>>();
            },
            [](const FlattenSpec&) -> std::unique_ptr<nn::Layer<Real>> {
              return std::make_unique<nn::Flatten<Real>>();
            },
            [](const LinearSpec& l) -> std::unique_ptr<nn::Layer<Real>> {
              return std::make_unique<nn::Linear<Real>>(l.in, l.out);
            },
            [](const SpatialAttentionSpec& a) -> std::unique_ptr<nn::Layer<Real>> {
              return std::make_unique<nn::SpatialAttention<Real>>(a.kernel);
            },
            [](const ResNeXtBlockSpec& b) -> std::unique_ptr<nn::Layer<Real>> {
              return std::make_unique<nn::ResNeXtBlock<Real>>(b.in, b.mid, b.out, b.groups, b.stride);
            },
        },
        layer.kind);
    model->add(std::move(built));
  }
  return model;
}

template std::unique_ptr<nn::Sequential<float>> instantiate<float>(const ModelGraph&);
template std::unique_ptr<nn::Sequential<double>> instantiate<double>(const ModelGraph&);

ComplexityReport count_complexity(const ModelGraph& graph, const nn::Shape& input, MacConvention convention) {
  const std::uint64_t mac = static_cast<std::uint64_t>(convention);
  ComplexityReport report;
  report.convention = convention;
  nn::Shape s{1, input.c, input.h, input.w};
  for (const LayerSpec& layer : graph.layers) {
    const nn::Shape in = s;
    s = propagate(layer.kind, s);
    LayerComplexity entry{layer.label, kind_name(layer.kind), s, spec_parameter_count(layer.kind), 0};
    entry.flops = std::visit(
        Overloaded{
            [&](const Conv2dSpec& c) {
              return mac * static_cast<std::uint64_t>(c.in / c.groups) * c.kernel * c.kernel * elements(s);
            },
            [&](const BatchNormSpec&) { return elements(s); },
            [&](const ReLUSpec&) { return elements(s); },
            [&](const SigmoidSpec&) { return elements(s); },
            [&](const MaxPoolSpec&) { return elements(in); },
            [&](const AdaptiveAvgPoolSpec&) { return elements(in); },
            [&](const FlattenSpec&) { return std::uint64_t{0}; },
            [&](const LinearSpec& l) { return mac * static_cast<std::uint64_t>(l.in) * l.out; },
            [&](const SpatialAttentionSpec& a) {
              const std::uint64_t positions = static_cast<std::uint64_t>(in.h) * in.w;
              // channel mean and max, 7x7 conv, sigmoid, broadcast multiply
              return 2 * elements(in) + mac * 2 * a.kernel * a.kernel * positions + positions + elements(in);
            },
            [&](const ResNeXtBlockSpec& b) {
              const std::uint64_t pin = static_cast<std::uint64_t>(in.h) * in.w;
              const std::uint64_t pout = static_cast<std::uint64_t>(s.h) * s.w;
              std::uint64_t f = mac * b.in * b.mid * pin + 2 * b.mid * pin;
              f += mac * (b.mid / b.groups) * 9 * b.mid * pout + 2 * b.mid * pout;
              f += mac * b.mid * b.out * pout + b.out * pout;
              if (b.stride != 1 || b.in != b.out) f += mac * b.in * b.out * pout + b.out * pout;
              return f + 2 * b.out * pout;
            },
        },
        layer.kind);
    report.total_params += entry.params;
    report.total_flops += entry.flops;
    report.layers.push_back(std::move(entry));
  }
  return report;
}

std::string ComplexityReport::render() const {
  std::ostringstream out;
  out << "layer,kind,output,params,flops\n";
  for (const LayerComplexity& l : layers) {
    out << l.label << ',' << l.kind << ',' << l.output.c << 'x' << l.output.h << 'x' << l.output.w << ',' << l.params
        << ',' << l.flops << '\n';
  }
  out << "total,,," << total_params << ',' << total_flops << '\n';
  out << "# convention MAC=" << static_cast<int>(convention) << '\n';
  return out.str();
}

void write_checkpoint(const std::filesystem::path& path, const ModelGraph& graph, nn::Layer<float>& model,
                      std::uint64_t config_hash) {
  struct Record {
    std::string name;
    const nn::Tensor<float>* tensor;
  };
  std::vector<Record> records;
  model.visit_parameters("", [&](const std::string& name, nn::Parameter<float>& p) {
    records.push_back({name, &p.value});
  });
  model.visit_buffers("", [&](const std::string& name, nn::Tensor<float>& t) { records.push_back({name, &t}); });

  write_file_atomic(path, [&](std::ostream& out) {
    out.write(kCheckpointMagic, 4);
    binary::write_u32(out, kCheckpointVersion);
    binary::write_string(out, graph.name);
    binary::write_u32(out, static_cast<std::uint32_t>(graph.layers.size()));
    binary::write_u32(out, static_cast<std::uint32_t>(graph.num_classes));
    binary::write_u64(out, config_hash);
    binary::write_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const Record& r : records) {
      binary::write_string(out, r.name);
      const nn::Shape& s = r.tensor->shape();
      for (int e : {s.n, s.c, s.h, s.w}) binary::write_u32(out, static_cast<std::uint32_t>(e));
      binary::write_f32s(out, r.tensor->values());
    }
  });
}

namespace {

CheckpointInfo read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[4] = {};
  in.read(magic, 4);
  require(in && std::equal(magic, magic + 4, kCheckpointMagic), ErrorKind::Io,
          path.string() + " is not a checkpoint");
  const std::uint32_t version = binary::read_u32(in);
  require(version == kCheckpointVersion, ErrorKind::Incompatibility,
          "unsupported checkpoint version " + std::to_string(version));
  CheckpointInfo info;
  info.graph_name = binary::read_string(in);
  info.layer_count = binary::read_u32(in);
  info.num_classes = binary::read_u32(in);
  info.config_hash = binary::read_u64(in);
  return info;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open checkpoint " + path.string());
  return read_header(in, path);
}

CheckpointInfo read_checkpoint(const std::filesystem::path& path, const ModelGraph& graph, nn::Layer<float>& model) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open checkpoint " + path.string());
  const CheckpointInfo info = read_header(in, path);
  require(info.graph_name == graph.name, ErrorKind::Incompatibility,
          "checkpoint holds graph " + info.graph_name + ", expected " + graph.name);
  require(info.layer_count == graph.layers.size() && info.num_classes == static_cast<std::uint32_t>(graph.num_classes),
          ErrorKind::Incompatibility, "checkpoint layer count or class count differs from the graph");

  std::vector<std::pair<std::string, nn::Tensor<float>*>> targets;
  model.visit_parameters("", [&](const std::string& name, nn::Parameter<float>& p) {
    targets.emplace_back(name, &p.value);
  });
  model.visit_buffers("", [&](const std::string& name, nn::Tensor<float>& t) { targets.emplace_back(name, &t); });

  const std::uint32_t count = binary::read_u32(in);
  require(count == targets.size(), ErrorKind::Incompatibility,
          "checkpoint has " + std::to_string(count) + " records, graph needs " + std::to_string(targets.size()));
  for (auto& [name, tensor] : targets) {
    const std::string stored = binary::read_string(in);
    require(stored == name, ErrorKind::Incompatibility, "checkpoint record " + stored + " where " + name + " expected");
    nn::Shape s;
    s.n = static_cast<int>(binary::read_u32(in));
    s.c = static_cast<int>(binary::read_u32(in));
    s.h = static_cast<int>(binary::read_u32(in));
    s.w = static_cast<int>(binary::read_u32(in));
    require(s == tensor->shape(), ErrorKind::Incompatibility,
            "record " + name + " has shape " + s.str() + ", graph expects " + tensor->shape().str());
    binary::read_f32s(in, tensor->values());
  }
  in.peek();
  require(in.eof(), ErrorKind::Io, "trailing bytes after the last checkpoint record");
  return info;
}

}  // namespace wkpnet::models
