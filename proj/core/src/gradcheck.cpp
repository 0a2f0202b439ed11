#include "mergecap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mergecap/errors.hpp"
#include "mergecap/nn.hpp"

namespace mergecap {

std::vector<Sample<double>> GradCheckProblem::samples() const {
  std::vector<Sample<double>> out;
  for (std::size_t i = 0; i < captions.size(); ++i) out.push_back({features[i], captions[i]});
  return out;
}

namespace {

bool same_window(const std::vector<int>& ids, std::size_t a, std::size_t b, std::size_t kernel) {
  return std::equal(ids.begin() + static_cast<std::ptrdiff_t>(a), ids.begin() + static_cast<std::ptrdiff_t>(a + kernel),
                    ids.begin() + static_cast<std::ptrdiff_t>(b));
}

double min_abs(std::span<const double> v) {
  double m = std::numeric_limits<double>::infinity();
  for (double x : v) m = std::min(m, std::abs(x));
  return m;
}

// Distance from the nearest kink for one prefix.
double prefix_kink_distance(const GradCheckProblem& pr, std::span<const double> feature, std::vector<int> ids) {
  const auto& c = pr.config;
  const auto& p = pr.params;
  ids.resize(c.max_len, Vocabulary::kPad);
  double dist = std::numeric_limits<double>::infinity();

  const auto x = nn::embedding_forward<double>(ids, p.embedding);
  const auto conv = nn::conv1d_forward<double>(x, p.conv_w, p.conv_b.data, c.kernel);
  dist = std::min(dist, min_abs(conv.pre_activation.data));
  const auto pool = nn::global_max_pool(conv.output);
  for (std::size_t f = 0; f < c.conv_filters; ++f) {
    if (!(pool.values[f] > 0)) continue;
    for (std::size_t t = 0; t < conv.output.rows; ++t) {
      // Windows over identical ids move together under any perturbation.
      if (t == pool.argmax[f] || same_window(ids, t, pool.argmax[f], c.kernel)) continue;
      dist = std::min(dist, pool.values[f] - conv.output(t, f));
    }
  }

  std::vector<double> merged = pool.values;
  if (c.image_projection) {
    const auto proj = nn::dense_forward<double>(feature, p.proj_w, p.proj_b.data, nn::Activation::kRelu);
    dist = std::min(dist, min_abs(proj.pre_activation));
    merged.insert(merged.end(), proj.output.begin(), proj.output.end());
  } else {
    merged.insert(merged.end(), feature.begin(), feature.end());
  }
  const auto hidden = nn::dense_forward<double>(merged, p.merge_w, p.merge_b.data, nn::Activation::kRelu);
  dist = std::min(dist, min_abs(hidden.pre_activation));
  return dist;
}

}  // namespace

double kink_distance(const GradCheckProblem& problem) {
  double dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < problem.captions.size(); ++i) {
    const auto& cap = problem.captions[i];
    for (std::size_t t = 0; t + 1 < cap.true_length; ++t)
      dist = std::min(dist, prefix_kink_distance(problem, problem.features[i],
                                                 std::vector<int>(cap.ids.begin(), cap.ids.begin() + static_cast<std::ptrdiff_t>(t + 1))));
  }
  return dist;
}

GradCheckProblem make_grad_check_problem(const ModelConfig& config, std::size_t batch_size, double margin,
                                         std::size_t max_attempts) {
  config.validate();
  if (batch_size == 0) throw EmptyBatch("gradient check needs at least one caption");
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    GradCheckProblem pr;
    pr.config = config;
    pr.config.seed = config.seed + attempt;
    pr.accepted_seed = pr.config.seed;
    pr.params = init_params<double>(pr.config);

    std::mt19937_64 rng(pr.config.seed ^ 0xD1B54A32D192ED03ULL);
    auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    // Non-zero biases so the probe is not symmetric around the origin.
    for (auto* t : {&pr.params.conv_b, &pr.params.merge_b, &pr.params.out_b, &pr.params.proj_b})
      for (double& v : t->data) v = uniform() - 0.5;

    for (std::size_t b = 0; b < batch_size; ++b) {
      std::vector<double> feat(config.feature_dim);
      for (double& v : feat) v = 2 * uniform() - 1;
      pr.features.push_back(std::move(feat));

      const std::size_t body = 1 + static_cast<std::size_t>(rng() % (config.max_len - 2));
      EncodedCaption cap;
      cap.ids.assign(config.max_len, Vocabulary::kPad);
      cap.ids[0] = Vocabulary::kStart;
      const std::size_t first_word = Vocabulary::kUnk;
      for (std::size_t i = 1; i <= body; ++i)
        cap.ids[i] = static_cast<int>(first_word + rng() % (config.vocab_size - first_word));
      cap.ids[body + 1] = Vocabulary::kEnd;
      cap.true_length = body + 2;
      pr.captions.push_back(std::move(cap));
    }
    if (kink_distance(pr) >= margin) return pr;
  }
  throw NumericError("no smooth gradient-check probe found in " + std::to_string(max_attempts) + " attempts");
}

std::vector<GroupError> check_model_gradients(GradCheckProblem& problem, double eps, bool flip_sign) {
  const auto samples = problem.samples();
  const auto analytic = loss_and_grads<double>(problem.params, problem.config, samples);
  const auto manifest = parameter_manifest(problem.config);
  auto params = problem.params.tensors();
  const auto grads = analytic.grads.tensors();

  auto loss = [&] { return mean_loss<double>(problem.params, problem.config, samples); };
  std::vector<GroupError> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> g = grads[i]->data;
    if (flip_sign)
      for (double& v : g) v = -v;
    out.push_back({manifest[i].name, nn::grad_check(loss, params[i]->data, g, eps)});
  }
  return out;
}

}  // namespace mergecap
