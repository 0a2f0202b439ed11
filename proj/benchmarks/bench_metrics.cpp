#include <benchmark/benchmark.h>

#include <random>

#include "mergecap/mergecap.hpp"

namespace {

using namespace mergecap;

std::vector<EvalPair> corpus(std::size_t images) {
  std::mt19937_64 rng(17);
  auto sentence = [&] {
    TokenList t(6 + rng() % 8);
    for (auto& w : t) w = "w" + std::to_string(rng() % 500);
    return t;
  };
  std::vector<EvalPair> out;
  for (std::size_t i = 0; i < images; ++i) out.push_back({"img" + std::to_string(i), sentence(), {sentence(), sentence()}});
  return out;
}

void BM_Bleu4(benchmark::State& state) {
  const auto c = corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(bleu(c, 4));
}
BENCHMARK(BM_Bleu4)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_RougeL(benchmark::State& state) {
  const auto c = corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(rouge_l(c));
}
BENCHMARK(BM_RougeL)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Cider(benchmark::State& state) {
  const auto c = corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(cider(c));
}
BENCHMARK(BM_Cider)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
