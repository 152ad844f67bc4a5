#include <benchmark/benchmark.h>

#include <complex>
#include <random>
#include <vector>

#include "wkpnet/models.hpp"
#include "wkpnet/nn/layers.hpp"
#include "wkpnet/wavelet.hpp"

using namespace wkpnet;

namespace {

std::vector<std::complex<double>> random_window(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  std::vector<std::complex<double>> y(n);
  for (auto& s : y) s = {d(rng), d(rng)};
  return y;
}

nn::Tensor<float> random_tensor(const nn::Shape& shape) {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> d;
  nn::Tensor<float> t(shape);
  for (float& v : t.values()) v = d(rng);
  return t;
}

void BM_WpdFeatures(benchmark::State& state) {
  const auto y = random_window(4096);
  const auto& bank = wavelet::build_filter_bank(wavelet::WaveletFamily::parse(state.range(0) == 0 ? "haar" : "db4"));
  for (auto _ : state) benchmark::DoNotOptimize(wavelet::featurize_wpd(y, bank, 5));
}
BENCHMARK(BM_WpdFeatures)->Arg(0)->Arg(1);

void BM_StftFeatures(benchmark::State& state) {
  const auto y = random_window(4096);
  for (auto _ : state) benchmark::DoNotOptimize(wavelet::featurize_stft(y));
}
BENCHMARK(BM_StftFeatures);

// Args: input channels, output channels, kernel, stride, groups.
void BM_Conv2d(benchmark::State& state) {
  const int in = static_cast<int>(state.range(0));
  const int out = static_cast<int>(state.range(1));
  const int k = static_cast<int>(state.range(2));
  nn::Conv2d<float> conv(in, out, k, static_cast<int>(state.range(3)), k / 2, static_cast<int>(state.range(4)), true);
  nn::initialize_parameters(conv, 3);
  const auto x = random_tensor({10, in, 32, 16});
  for (auto _ : state) {
    const auto y = conv.forward(x, nn::Mode::Train);
    benchmark::DoNotOptimize(conv.backward(y));
  }
}
BENCHMARK(BM_Conv2d)->Args({32, 64, 3, 1, 1})->Args({64, 64, 3, 1, 32})->Args({64, 128, 1, 1, 1})->Args({64, 64, 3, 2, 1});

void BM_StudentStep(benchmark::State& state) {
  auto net = models::instantiate<float>(models::build_student(16));
  nn::initialize_parameters(*net, 4);
  const auto x = random_tensor({10, 2, 128, 32});
  for (auto _ : state) {
    const auto z = net->forward(x, nn::Mode::Train);
    benchmark::DoNotOptimize(net->backward(z));
  }
}
BENCHMARK(BM_StudentStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
