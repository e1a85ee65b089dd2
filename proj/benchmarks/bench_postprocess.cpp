#include <benchmark/benchmark.h>

#include <random>

#include "yolortho/postprocess.hpp"

using namespace yolortho;

namespace {

std::vector<Detection> random_detections(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    Detection d;
    const double x = u(rng) * 900.0, y = u(rng) * 400.0;
    d.box = {x, y, x + 20.0 + 40.0 * u(rng), y + 40.0 + 60.0 * u(rng)};
    for (double& p : d.class_probs) p = u(rng);
    d.confidence = 0.25 + 0.75 * u(rng);
    out.push_back(d);
  }
  return out;
}

void BM_SolveAssignment(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  post::CostMatrix c(n, 32);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < 32; ++k) c(r, k) = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(post::solve_assignment(c));
}
BENCHMARK(BM_SolveAssignment)->Arg(8)->Arg(32)->Arg(40);

void BM_CorrectEnumeration(benchmark::State& state) {
  const auto dets = random_detections(static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(post::correct_enumeration(dets));
}
BENCHMARK(BM_CorrectEnumeration)->Arg(32)->Arg(40);

void BM_Nms(benchmark::State& state) {
  const auto dets = random_detections(static_cast<int>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(post::nms(dets, 0.7, 0.25));
}
BENCHMARK(BM_Nms)->Arg(100)->Arg(1000);

}  // namespace
