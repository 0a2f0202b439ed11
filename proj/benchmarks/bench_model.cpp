#include <benchmark/benchmark.h>

#include <random>

#include "mergecap/mergecap.hpp"

namespace {

using namespace mergecap;

struct Batch {
  ModelConfig config;
  ModelParams<float> params;
  std::vector<std::vector<float>> features;
  std::vector<Sample<float>> samples;
};

Batch make_batch(std::size_t vocab, std::size_t dim, std::size_t n) {
  Batch b;
  b.config = ModelConfig{vocab, dim, 2 * dim, 3, 2048, 2 * dim, 20, false, 1};
  b.params = init_params<float>(b.config);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1, 1);
  b.features.assign(n, std::vector<float>(b.config.feature_dim));
  for (auto& f : b.features)
    for (auto& v : f) v = u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    EncodedCaption c;
    c.ids.assign(b.config.max_len, Vocabulary::kPad);
    c.ids[0] = Vocabulary::kStart;
    const std::size_t len = 5 + rng() % 10;
    for (std::size_t t = 1; t < len; ++t) c.ids[t] = static_cast<int>(4 + rng() % (vocab - 4));
    c.ids[len] = Vocabulary::kEnd;
    c.true_length = len + 1;
    b.samples.push_back({b.features[i], c});
  }
  return b;
}

void BM_Forward(benchmark::State& state) {
  const auto b = make_batch(static_cast<std::size_t>(state.range(0)), 64, 1);
  const auto& ids = b.samples[0].caption.ids;
  for (auto _ : state) benchmark::DoNotOptimize(forward<float>(b.params, b.config, b.samples[0].feature, ids));
}
BENCHMARK(BM_Forward)->Arg(1000)->Arg(8000);

void BM_LossAndGrads(benchmark::State& state) {
  const auto b = make_batch(2000, 64, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grads<float>(b.params, b.config, b.samples));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrads)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
