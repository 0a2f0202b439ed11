#include <benchmark/benchmark.h>

#include <random>

#include "mergecap/mergecap.hpp"

namespace {

using namespace mergecap;

struct Fixture {
  ModelConfig config{2000, 64, 128, 3, 2048, 128, 20, false, 3};
  ModelParams<float> params = init_params<float>(config);
  std::vector<float> feature = std::vector<float>(config.feature_dim, 0.1f);
};

void BM_Greedy(benchmark::State& state) {
  const Fixture f;
  const ModelScorer<float> scorer(f.params, f.config, f.feature);
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode(scorer, f.config.max_len));
}
BENCHMARK(BM_Greedy)->Unit(benchmark::kMillisecond);

void BM_Beam(benchmark::State& state) {
  const Fixture f;
  const ModelScorer<float> scorer(f.params, f.config, f.feature);
  const BeamOptions opts{static_cast<std::size_t>(state.range(0)), f.config.max_len, false};
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(scorer, opts));
}
BENCHMARK(BM_Beam)->Arg(1)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace
