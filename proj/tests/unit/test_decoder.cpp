#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include "test_support.hpp"

using namespace mergecap;
using mergecap::testing::FunctionScorer;
using mergecap::testing::make_tiny_model;
using mergecap::testing::uniform01;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kA = 4, kB = 5;

std::vector<double> probs_to_logs(std::vector<double> p) {
  for (auto& v : p) v = v > 0 ? std::log(v) : kNegInf;
  return p;
}

// P(A)=0.6, P(B)=0.4 after start. Best continuation after A is 0.3, after B
// it is end with 0.9.
FunctionScorer two_step_toy() {
  return FunctionScorer(6, [](std::span<const int> prefix) {
    if (prefix.size() == 1) return probs_to_logs({0, 0, 0, 0, 0.6, 0.4});
    if (prefix.size() == 2 && prefix[1] == kA) return probs_to_logs({0, 0, 0.3, 0.25, 0.25, 0.2});
    if (prefix.size() == 2 && prefix[1] == kB) return probs_to_logs({0, 0, 0.9, 0.05, 0.03, 0.02});
    return probs_to_logs({0, 0, 1, 0, 0, 0});
  });
}

// Random table over the free tokens, memoised per prefix.
struct RandomTable {
  std::size_t vocab;
  std::uint64_t seed;
  std::vector<double> operator()(std::span<const int> prefix) const {
    std::uint64_t h = seed;
    for (int id : prefix) h = h * 1000003 + static_cast<std::uint64_t>(id) + 1;
    std::mt19937_64 rng(h);
    std::vector<double> p(vocab, 0.0);
    double total = 0;
    for (std::size_t v = 2; v < vocab; ++v) total += p[v] = uniform01(rng) + 1e-3;
    for (auto& x : p) x /= total;
    return probs_to_logs(p);
  }
};

// Independent brute force: best summed score over all terminated sequences.
void enumerate(const NextTokenScorer& s, std::vector<int>& prefix, double score, std::size_t max_len,
               double& best) {
  if (prefix.back() == Vocabulary::kEnd || prefix.size() >= max_len) {
    best = std::max(best, score);
    return;
  }
  const auto lp = s.log_probs(prefix);
  for (std::size_t v = 0; v < lp.size(); ++v) {
    if (lp[v] == kNegInf) continue;
    prefix.push_back(static_cast<int>(v));
    enumerate(s, prefix, score + lp[v], max_len, best);
    prefix.pop_back();
  }
}

double brute_force_best(const NextTokenScorer& s, std::size_t max_len) {
  std::vector<int> prefix{Vocabulary::kStart};
  double best = kNegInf;
  enumerate(s, prefix, 0.0, max_len, best);
  return best;
}

double rescore(const NextTokenScorer& s, const std::vector<int>& ids) {
  double total = 0;
  for (std::size_t t = 1; t < ids.size(); ++t)
    total += s.log_probs(std::span<const int>(ids).first(t))[ids[t]];
  return total;
}

void check_well_formed(const DecodeResult& r, std::size_t max_len) {
  REQUIRE(!r.ids.empty());
  CHECK(r.ids.front() == Vocabulary::kStart);
  CHECK(r.ids.size() <= max_len);
  CHECK((r.ids.back() == Vocabulary::kEnd || r.ids.size() == max_len));
  for (std::size_t t = 1; t < r.ids.size(); ++t) {
    CHECK(r.ids[t] != Vocabulary::kPad);
    CHECK(r.ids[t] != Vocabulary::kStart);
  }
  for (std::size_t t = 1; t + 1 < r.ids.size(); ++t) CHECK(r.ids[t] != Vocabulary::kEnd);
}

}  // namespace

TEST_CASE("model that always emits end") {
  FunctionScorer s(6, [](std::span<const int>) { return probs_to_logs({0, 0, 1, 0, 0, 0}); });
  const std::vector<int> expected{Vocabulary::kStart, Vocabulary::kEnd};
  CHECK(greedy_decode(s, 10).ids == expected);
  CHECK(beam_search(s, {5, 10, false}).ids == expected);
  CHECK(exhaustive_oracle(s, 4).ids == expected);
}

TEST_CASE("beam search finds the path greedy misses") {
  const auto s = two_step_toy();
  const auto g = greedy_decode(s, 4);
  CHECK(g.ids == std::vector<int>{1, kA, 2});
  CHECK(g.log_prob == doctest::Approx(std::log(0.18)));
  for (std::size_t w : {2, 3, 5}) {
    const auto b = beam_search(s, {w, 4, false});
    CHECK(b.ids == std::vector<int>{1, kB, 2});
    CHECK(b.log_prob == doctest::Approx(std::log(0.36)));
  }
  CHECK(beam_search(s, {1, 4, false}).ids == g.ids);
}

TEST_CASE("length normalisation can prefer the longer hypothesis") {
  FunctionScorer s(5, [](std::span<const int> prefix) {
    if (prefix.size() == 1) return probs_to_logs({0, 0, 0.5, 0, 0.5});
    return probs_to_logs({0, 0, 1, 0, 0});
  });
  CHECK(beam_search(s, {3, 5, false}).ids == std::vector<int>{1, 2});
  CHECK(beam_search(s, {3, 5, true}).ids == std::vector<int>{1, 4, 2});
}

TEST_CASE("max_len bounds every decoder") {
  FunctionScorer never_end(5, [](std::span<const int>) { return probs_to_logs({0, 0, 0, 0.5, 0.5}); });
  for (std::size_t len : {2, 3, 6}) {
    CHECK(greedy_decode(never_end, len).ids.size() == len);
    CHECK(beam_search(never_end, {4, len, false}).ids.size() == len);
  }
}

TEST_CASE("oracle refuses oversized searches") {
  FunctionScorer s(10, RandomTable{10, 1});
  CHECK_THROWS_AS(exhaustive_oracle(s, 8), TooLarge);
  CHECK_NOTHROW(exhaustive_oracle(s, 3));
}

TEST_CASE("ranks_before ordering") {
  const std::vector<int> a{1, 4, 2}, b{1, 5, 2};
  CHECK(ranks_before(-1.0, a, -2.0, b));
  CHECK_FALSE(ranks_before(-2.0, a, -1.0, b));
  CHECK(ranks_before(-1.0, a, -1.0, b));
  CHECK_FALSE(ranks_before(-1.0, b, -1.0, a));
  CHECK_FALSE(ranks_before(-1.0, a, -1.0, a));
}

TEST_CASE("model scorer masks start and pad and normalises") {
  const auto m = make_tiny_model(3, 7, 5);
  ModelScorer<float> s(m.params, m.config, m.feature);
  const std::vector<int> prefix{Vocabulary::kStart, 4};
  const auto lp = s.log_probs(prefix);
  REQUIRE(lp.size() == 7);
  CHECK(lp[Vocabulary::kPad] == kNegInf);
  CHECK(lp[Vocabulary::kStart] == kNegInf);
  double total = 0;
  for (double v : lp)
    if (v != kNegInf) total += std::exp(v);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("property: random tables, width 1 equals greedy and wide beams are exact") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const std::size_t vocab = 4 + seed % 3;
    const std::size_t max_len = 2 + seed % 4;
    FunctionScorer s(vocab, RandomTable{vocab, seed});
    const auto g = greedy_decode(s, max_len);
    const auto b1 = beam_search(s, {1, max_len, false});
    REQUIRE(b1.ids == g.ids);
    REQUIRE(b1.log_prob == g.log_prob);

    const auto oracle = exhaustive_oracle(s, max_len);
    REQUIRE(oracle.log_prob == doctest::Approx(brute_force_best(s, max_len)).epsilon(1e-12));
    const auto wide = beam_search(s, {64, max_len, false});
    REQUIRE(wide.log_prob == oracle.log_prob);
    REQUIRE(wide.ids == oracle.ids);
  }
}

TEST_CASE("property: tiny models produce well-formed ordered results") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::size_t max_len = 3 + seed % 3;
    const auto m = make_tiny_model(seed, 6, max_len);
    ModelScorer<float> s(m.params, m.config, m.feature);
    const auto g = greedy_decode(s, max_len);
    const auto b = beam_search(s, {5, max_len, false});
    const auto o = exhaustive_oracle(s, max_len);
    for (const auto* r : {&g, &b, &o}) {
      check_well_formed(*r, max_len);
      CHECK(r->log_prob == doctest::Approx(rescore(s, r->ids)).epsilon(1e-12));
    }
    CHECK(b.log_prob <= o.log_prob + 1e-9);
    // With at most two decision steps a width-5 beam always contains greedy's path.
    if (max_len <= 3) CHECK(g.log_prob <= b.log_prob + 1e-9);
  }
}
