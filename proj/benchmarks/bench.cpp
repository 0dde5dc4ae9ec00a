#include <benchmark/benchmark.h>

#include <span>

#include "compactnet/latsim.hpp"
#include "compactnet/micronn.hpp"
#include "compactnet/rng.hpp"
#include "compactnet/search.hpp"

namespace {

using namespace compactnet;

const NetworkSpec& mobilenet() {
  static const NetworkSpec spec = mobilenet_v2_spec(10);
  return spec;
}

const PlatformProfile& mobilenet_profile() {
  static const PlatformProfile profile =
      collect_profile(*synthetic_backend(BackendPreset::CpuLike, 1, mobilenet()), mobilenet(), 8);
  return profile;
}

void BM_Simulate(benchmark::State& state) {
  const auto& profile = mobilenet_profile();
  const auto spec = trim_layer(mobilenet(), 4, 13);  // off-grid: interpolates
  for (auto _ : state) benchmark::DoNotOptimize(simulate(profile, spec));
}
BENCHMARK(BM_Simulate);

void BM_QueryLatency(benchmark::State& state) {
  const auto& profile = mobilenet_profile();
  Rng rng(3);
  for (auto _ : state) {
    const int cin = 1 + static_cast<int>(rng.below(96));
    const int cout = 1 + static_cast<int>(rng.below(96));
    benchmark::DoNotOptimize(query_latency(profile, 12, cin, cout));
  }
}
BENCHMARK(BM_QueryLatency);

void BM_CollectProfile(benchmark::State& state) {
  const auto spec = micro_mobilenet_spec(4);
  const auto backend = synthetic_backend(BackendPreset::NpuLike, 1, spec);
  for (auto _ : state) benchmark::DoNotOptimize(collect_profile(*backend, spec, 1));
}
BENCHMARK(BM_CollectProfile);

void BM_Forward(benchmark::State& state) {
  const auto spec = micro_mobilenet_spec(4);
  const Model model = build_model(spec, 1);
  const auto data = synthetic_dataset(4, 96, 4, 2);
  const std::span<const double> batch(data.train.images.data(),
                                      static_cast<size_t>(state.range(0)) * data.train.image_size());
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(96);

void BM_TrainStep(benchmark::State& state) {
  const auto spec = micro_mobilenet_spec(4);
  const Model model = build_model(spec, 1);
  const auto data = synthetic_dataset(4, 96, 4, 2);
  Gradients grads;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        loss_and_gradients(model, data.train.images, data.train.labels, grads));
  }
  state.SetItemsProcessed(state.iterations() * 96);
}
BENCHMARK(BM_TrainStep);

void BM_TrimToBudget(benchmark::State& state) {
  const auto spec = micro_mobilenet_spec(4);
  const auto profile =
      collect_profile(*synthetic_backend(BackendPreset::CpuLike, 1, spec), spec, 1);
  const Model model = build_model(spec, 1);
  const double budget = simulate(profile, spec) * 0.9;
  for (auto _ : state) benchmark::DoNotOptimize(trim_to_budget(model, profile, 4, budget, 1));
}
BENCHMARK(BM_TrimToBudget);

}  // namespace

BENCHMARK_MAIN();
