#include <benchmark/benchmark.h>

#include <random>

#include "yolortho/network.hpp"

using namespace yolortho;

namespace {

void BM_DetectorForward(benchmark::State& state) {
  nn::ModelConfig cfg;
  cfg.input_size = static_cast<int>(state.range(0));
  cfg.width_mult = 0.25;
  nn::Detector model(cfg);
  model.initialize(1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(cfg.input_size, cfg.input_size);
  for (double& p : img.pixels) p = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(img));
}
BENCHMARK(BM_DetectorForward)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  nn::ModelConfig cfg;
  cfg.input_size = 128;
  cfg.width_mult = 0.5;
  nn::Detector model(cfg);
  model.initialize(1);
  Image img(128, 128, 0.5);
  std::vector<double> grad(model.parameters().size());
  for (auto _ : state) {
    nn::ForwardTrace trace;
    const nn::RawPredictions raw = model.forward(img, trace);
    model.backward(trace, raw, grad);
    benchmark::DoNotOptimize(grad.data());
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

}  // namespace
