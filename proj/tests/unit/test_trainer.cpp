#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"

using namespace mergecap;
using mergecap::testing::uniform01;

namespace {

ModelParams<float> scalar_params(float value) {
  ModelParams<float> p;
  p.embedding = Matrix<float>(1, 1, value);
  return p;
}

struct ToyData {
  ModelConfig config;
  std::vector<std::vector<float>> features;
  std::vector<Sample<float>> samples;
};

ToyData toy_data(std::size_t n, std::uint64_t seed) {
  ToyData d;
  d.config = ModelConfig{9, 8, 16, 3, 6, 16, 6, false, seed};
  std::mt19937_64 rng(seed);
  d.features.resize(n);
  for (auto& f : d.features) {
    f.resize(d.config.feature_dim);
    for (auto& v : f) v = static_cast<float>(2 * uniform01(rng) - 1);
  }
  for (std::size_t i = 0; i < n; ++i) {
    EncodedCaption c;
    const std::size_t body = 1 + rng() % 3;
    c.ids.assign(d.config.max_len, Vocabulary::kPad);
    c.ids[0] = Vocabulary::kStart;
    for (std::size_t j = 1; j <= body; ++j) c.ids[j] = static_cast<int>(4 + rng() % 5);
    c.ids[body + 1] = Vocabulary::kEnd;
    c.true_length = body + 2;
    d.samples.push_back({d.features[i], c});
  }
  return d;
}

}  // namespace

TEST_CASE("sgd step") {
  TrainConfig tc;
  tc.optimizer = OptimizerKind::kSgd;
  tc.learning_rate = 0.1;
  Optimizer<float> opt(tc);
  auto p = scalar_params(1.0f);
  opt.step(p, scalar_params(2.0f));
  CHECK(p.embedding.data[0] == doctest::Approx(0.8f));
}

TEST_CASE("adam first step has magnitude lr") {
  for (float g : {2.0f, -0.003f, 150.0f}) {
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.clip_norm = 0;
    Optimizer<float> opt(tc);
    auto p = scalar_params(1.0f);
    opt.step(p, scalar_params(g));
    // m_hat = g, v_hat = g^2 after bias correction.
    const double expected = 1.0 - 1e-3 * g / (std::abs(g) + 1e-8);
    CHECK(p.embedding.data[0] == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("zero gradients leave parameters unchanged") {
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    TrainConfig tc;
    tc.optimizer = kind;
    Optimizer<float> opt(tc);
    auto p = scalar_params(0.25f);
    for (int i = 0; i < 3; ++i) opt.step(p, scalar_params(0.0f));
    CHECK(p.embedding.data[0] == 0.25f);
  }
}

TEST_CASE("optimizer rejects mismatched shapes") {
  Optimizer<float> opt(TrainConfig{});
  auto p = scalar_params(1.0f);
  ModelParams<float> g;
  g.embedding = Matrix<float>(2, 1);
  CHECK_THROWS_AS(opt.step(p, g), ShapeError);
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.patience = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.learning_rate = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("property: clipping never increases the norm and keeps direction") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    ModelParams<double> g;
    g.embedding = Matrix<double>(3, 4);
    g.out_b = Matrix<double>(1, 5);
    const double scale = std::pow(10.0, 4 * uniform01(rng) - 2);
    for (auto* t : g.tensors())
      for (auto& v : t->data) v = scale * (2 * uniform01(rng) - 1);
    const auto before = g;
    const double limit = 5.0 * uniform01(rng) + 0.01;
    const double norm = clip_by_global_norm(g, limit);
    const double after = global_norm(g);
    REQUIRE(after <= norm * (1 + 1e-12));
    REQUIRE(after <= std::max(limit, norm) * (1 + 1e-12));
    const double factor = norm > limit ? limit / norm : 1.0;
    for (std::size_t i = 0; i < g.embedding.size(); ++i)
      REQUIRE(g.embedding.data[i] == doctest::Approx(before.embedding.data[i] * factor).epsilon(1e-12));
  }
}

TEST_CASE("evaluate_loss") {
  auto d = toy_data(6, 3);
  const auto p = init_params<float>(d.config);
  const auto lg = loss_and_grads<float>(p, d.config, d.samples);
  CHECK(evaluate_loss<float>(p, d.config, d.samples) == doctest::Approx(lg.loss).epsilon(1e-6));

  auto reversed = d.samples;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(evaluate_loss<float>(p, d.config, reversed) == doctest::Approx(lg.loss).epsilon(1e-12));

  auto uniform = p;
  uniform.out_w.fill(0);
  uniform.out_b.fill(0);
  CHECK(evaluate_loss<float>(uniform, d.config, d.samples) ==
        doctest::Approx(std::log(static_cast<double>(d.config.vocab_size))).epsilon(1e-6));

  CHECK_THROWS_AS(evaluate_loss<float>(p, d.config, std::span<const Sample<float>>{}), EmptySplit);
}

TEST_CASE("early stopping with patience 1 and rising validation loss") {
  auto d = toy_data(4, 4);
  const auto init = init_params<float>(d.config);
  TrainConfig tc;
  tc.patience = 1;
  tc.max_epochs = 10;
  tc.batch_size = 2;

  std::vector<ModelParams<float>> snapshots;
  std::vector<ModelParams<float>> improvements;
  TrainCallbacks<float> cb;
  cb.validation_loss = [&](const ModelParams<float>& p, std::size_t epoch) {
    snapshots.push_back(p);
    return 1.0 + 0.5 * static_cast<double>(epoch - 1);  // strictly rising from epoch 2
  };
  cb.on_improvement = [&](const ModelParams<float>& p, const EpochRecord&) { improvements.push_back(p); };

  const auto r = train<float>(init, d.config, tc, d.samples, {}, cb);
  CHECK(r.history.epochs.size() == 3);
  CHECK(r.history.stopped_early);
  CHECK(r.history.best_epoch == 1);
  REQUIRE(snapshots.size() == 3);
  CHECK(r.best_params == snapshots[0]);
  CHECK_FALSE(r.best_params == snapshots[2]);
  REQUIRE(improvements.size() == 1);
  CHECK(improvements[0] == r.best_params);
}

TEST_CASE("best epoch is the earliest minimum") {
  auto d = toy_data(4, 5);
  TrainConfig tc;
  tc.patience = 3;
  tc.max_epochs = 5;
  const std::vector<double> scripted{3.0, 2.0, 2.0, 2.5, 2.0};
  TrainCallbacks<float> cb;
  cb.validation_loss = [&](const ModelParams<float>&, std::size_t epoch) { return scripted[epoch - 1]; };
  const auto r = train<float>(init_params<float>(d.config), d.config, tc, d.samples, {}, cb);
  CHECK(r.history.best_epoch == 2);
  CHECK(r.history.epochs.size() == 5);
  CHECK_FALSE(r.history.stopped_early);
}

TEST_CASE("training is deterministic for fixed seeds") {
  auto d = toy_data(8, 6);
  TrainConfig tc;
  tc.max_epochs = 5;
  tc.batch_size = 3;
  tc.shuffle_seed = 42;
  const auto init = init_params<float>(d.config);
  const auto a = train<float>(init, d.config, tc, d.samples, d.samples);
  const auto b = train<float>(init, d.config, tc, d.samples, d.samples);
  CHECK(a.best_params == b.best_params);
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    CHECK(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
    CHECK(a.history.epochs[i].val_loss == b.history.epochs[i].val_loss);
  }
}

TEST_CASE("shuffled_indices is a seeded permutation") {
  const auto a = shuffled_indices(50, 1, 1);
  CHECK(a == shuffled_indices(50, 1, 1));
  CHECK(a != shuffled_indices(50, 1, 2));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("empty splits are rejected") {
  auto d = toy_data(2, 7);
  const auto init = init_params<float>(d.config);
  CHECK_THROWS_AS(train<float>(init, d.config, TrainConfig{}, {}, d.samples), EmptySplit);
  CHECK_THROWS_AS(train<float>(init, d.config, TrainConfig{}, d.samples, {}), EmptySplit);
}

TEST_CASE("ten-pair toy set overfits below 0.1 within 300 epochs") {
  auto d = toy_data(10, 8);
  d.config.embedding_dim = 16;
  d.config.conv_filters = 32;
  d.config.hidden_dim = 32;
  TrainConfig tc;
  tc.max_epochs = 300;
  tc.patience = 300;
  tc.batch_size = 5;
  tc.learning_rate = 3e-3;
  const auto r = train<float>(init_params<float>(d.config), d.config, tc, d.samples, d.samples);
  const double final_loss = evaluate_loss<float>(r.best_params, d.config, d.samples);
  MESSAGE("final train loss " << final_loss << " after " << r.history.epochs.size() << " epochs");
  CHECK(final_loss < 0.1);
}
