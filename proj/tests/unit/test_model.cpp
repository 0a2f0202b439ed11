#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"

using namespace mergecap;
using mergecap::testing::uniform01;

namespace {

ModelConfig toy_config(bool projection = false) {
  // V=7, D=4, F=5, I=3 as in the reference toy.
  return ModelConfig{7, 4, 5, 3, 3, 6, 6, projection, 1};
}

std::vector<double> random_feature(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> f(n);
  for (auto& v : f) v = 2 * uniform01(rng) - 1;
  return f;
}

EncodedCaption caption_of(std::vector<int> body, std::size_t max_len) {
  EncodedCaption c;
  c.ids = {Vocabulary::kStart};
  c.ids.insert(c.ids.end(), body.begin(), body.end());
  c.ids.push_back(Vocabulary::kEnd);
  c.true_length = c.ids.size();
  c.ids.resize(max_len, Vocabulary::kPad);
  return c;
}

}  // namespace

TEST_CASE("parameter manifest follows the config") {
  ModelConfig c{100, 16, 32, 3, 2048, 64, 20, false, 0};
  auto m = parameter_manifest(c);
  REQUIRE(m.size() == 7);
  CHECK(m[0] == TensorShape{"embedding", 100, 16});
  CHECK(m[1] == TensorShape{"conv_w", 32, 48});
  CHECK(m[3] == TensorShape{"merge_w", 64, 32 + 2048});
  CHECK(m[5] == TensorShape{"out_w", 100, 64});

  c.image_projection = true;
  m = parameter_manifest(c);
  REQUIRE(m.size() == 9);
  CHECK(m[3] == TensorShape{"proj_w", 64, 2048});
  CHECK(m[5] == TensorShape{"merge_w", 64, 32 + 64});

  auto p = init_params<float>(c);
  CHECK_NOTHROW(p.check_shapes(c));
  c.image_projection = false;
  CHECK_THROWS_AS(p.check_shapes(c), ShapeMismatch);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(ModelConfig({3, 4, 5, 3, 3, 6, 6, false, 0}).validate(), ConfigError);
  CHECK_THROWS_AS(ModelConfig({7, 0, 5, 3, 3, 6, 6, false, 0}).validate(), ConfigError);
  CHECK_THROWS_AS(ModelConfig({7, 4, 5, 7, 3, 6, 6, false, 0}).validate(), ConfigError);
  CHECK_NOTHROW(ModelConfig({7, 4, 5, 3, 3, 6, 6, false, 0}).validate());
}

TEST_CASE("init_params is deterministic and within Glorot bounds") {
  const auto c = toy_config(true);
  const auto a = init_params<float>(c);
  const auto b = init_params<float>(c);
  CHECK(a == b);

  auto c2 = c;
  c2.seed = 2;
  CHECK_FALSE(init_params<float>(c2) == a);

  const auto manifest = parameter_manifest(c);
  const auto ts = a.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto [fan_in, fan_out] = glorot_fans(c, manifest[i].name);
    if (fan_in == 0) {
      for (float v : ts[i]->data) CHECK(v == 0.0f);
      continue;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    double max_abs = 0;
    for (float v : ts[i]->data) max_abs = std::max(max_abs, static_cast<double>(std::abs(v)));
    CHECK(max_abs <= bound);
    CHECK(max_abs > 0.5 * bound);
  }
}

TEST_CASE("forward yields a distribution and is pure") {
  std::mt19937_64 rng(2);
  const auto c = toy_config();
  const auto p = init_params<double>(c);
  const auto feat = random_feature(rng, c.feature_dim);
  const std::vector<int> prefix{1, 4, 5};
  const auto probs = forward<double>(p, c, feat, prefix);
  REQUIRE(probs.size() == c.vocab_size);
  double sum = 0;
  for (double v : probs) sum += v;
  CHECK(std::abs(sum - 1) < 1e-6);
  CHECK(forward<double>(p, c, feat, prefix) == probs);

  // Explicit padding is the same as implicit padding.
  std::vector<int> padded = prefix;
  padded.resize(c.max_len, Vocabulary::kPad);
  CHECK(forward<double>(p, c, feat, padded) == probs);

  CHECK_THROWS_AS(forward<double>(p, c, std::vector<double>(2), prefix), ShapeError);
  CHECK_THROWS_AS(forward<double>(p, c, feat, std::vector<int>(c.max_len + 1, 1)), ShapeError);
}

TEST_CASE("zero conv weights and zero image make the prediction prefix-independent") {
  std::mt19937_64 rng(3);
  const auto c = toy_config();
  auto p = init_params<double>(c);
  p.conv_w.fill(0);
  for (auto& v : p.conv_b.data) v = 0.3;
  const std::vector<double> zero_feat(c.feature_dim, 0.0);
  const auto base = forward<double>(p, c, zero_feat, std::vector<int>{1});
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> prefix{1};
    for (std::size_t i = 0, n = rng() % (c.max_len - 1); i < n; ++i)
      prefix.push_back(static_cast<int>(rng() % c.vocab_size));
    CHECK(forward<double>(p, c, zero_feat, prefix) == base);
  }
}

TEST_CASE("loss expands each caption into n-1 teacher-forced examples") {
  const auto c = toy_config();
  const auto p = init_params<double>(c);
  std::mt19937_64 rng(4);
  const auto feat = random_feature(rng, c.feature_dim);
  const auto cap = caption_of({5}, c.max_len);  // [start, w, end]
  const std::vector<Sample<double>> batch{{feat, cap}};
  const auto lg = loss_and_grads<double>(p, c, batch);
  CHECK(lg.examples == 2);

  const double l1 = -std::log(forward<double>(p, c, feat, std::vector<int>{1})[5]);
  const double l2 = -std::log(forward<double>(p, c, feat, std::vector<int>{1, 5})[2]);
  CHECK(lg.loss == doctest::Approx((l1 + l2) / 2).epsilon(1e-12));
  CHECK(mean_loss<double>(p, c, batch) == doctest::Approx(lg.loss).epsilon(1e-14));

  CHECK_THROWS_AS(loss_and_grads<double>(p, c, std::span<const Sample<double>>{}), EmptyBatch);
}

TEST_CASE("duplicating the batch leaves the mean loss unchanged") {
  const auto c = toy_config();
  const auto p = init_params<double>(c);
  std::mt19937_64 rng(5);
  const auto f1 = random_feature(rng, c.feature_dim);
  const auto f2 = random_feature(rng, c.feature_dim);
  std::vector<Sample<double>> batch{{f1, caption_of({4, 5, 6}, c.max_len)}, {f2, caption_of({6}, c.max_len)}};
  const auto once = loss_and_grads<double>(p, c, batch);
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const auto twice = loss_and_grads<double>(p, c, doubled);
  CHECK(twice.loss == doctest::Approx(once.loss).epsilon(1e-12));
  CHECK(twice.grads.out_b.data[0] == doctest::Approx(once.grads.out_b.data[0]).epsilon(1e-10));
}

TEST_CASE("model gradients match finite differences on the V=7 toy") {
  for (bool projection : {false, true}) {
    auto c = toy_config(projection);
    auto problem = make_grad_check_problem(c, 1, 1e-4);
    CHECK(kink_distance(problem) >= 1e-4);
    for (const auto& g : check_model_gradients(problem, 1e-5)) {
      INFO(g.name);
      CHECK(g.max_relative_error < 1e-5);
    }
    for (const auto& g : check_model_gradients(problem, 1e-5, true)) CHECK(g.max_relative_error > 1.0);
  }
}

TEST_CASE("float and double paths agree") {
  const auto c = toy_config();
  const auto pd = init_params<double>(c);
  const auto pf = pd.cast<float>();
  std::mt19937_64 rng(6);
  const auto fd = random_feature(rng, c.feature_dim);
  const std::vector<float> ff(fd.begin(), fd.end());
  const std::vector<int> prefix{1, 4};
  const auto a = forward<double>(pd, c, fd, prefix);
  const auto b = forward<float>(pf, c, ff, prefix);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-5));
}

TEST_CASE("gradient descent lowers the loss on a fixed tiny batch") {
  const auto c = toy_config();
  auto p = init_params<double>(c);
  std::mt19937_64 rng(7);
  const auto f1 = random_feature(rng, c.feature_dim);
  const auto f2 = random_feature(rng, c.feature_dim);
  const std::vector<Sample<double>> batch{{f1, caption_of({4, 5}, c.max_len)}, {f2, caption_of({6, 4, 3}, c.max_len)}};
  const double start = mean_loss<double>(p, c, batch);
  for (int step = 0; step < 50; ++step) {
    const auto lg = loss_and_grads<double>(p, c, batch);
    auto ps = p.tensors();
    auto gs = lg.grads.tensors();
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (std::size_t j = 0; j < ps[i]->size(); ++j) ps[i]->data[j] -= 1e-2 * gs[i]->data[j];
  }
  CHECK(mean_loss<double>(p, c, batch) < start);
}
