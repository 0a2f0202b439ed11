#include "mergecap/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mergecap/errors.hpp"

namespace mergecap {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be > 0");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0))
    throw ConfigError("Adam hyper-parameters out of range");
}

template <class Real>
double global_norm(const ModelParams<Real>& grads) {
  double sq = 0;
  for (const auto* t : grads.tensors())
    for (Real v : t->data) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

template <class Real>
double clip_by_global_norm(ModelParams<Real>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto* t : grads.tensors())
      for (Real& v : t->data) v = static_cast<Real>(static_cast<double>(v) * factor);
  }
  return norm;
}

template <class Real>
Optimizer<Real>::Optimizer(const TrainConfig& config) : config_(config) {
  config_.validate();
}

template <class Real>
void Optimizer<Real>::step(ModelParams<Real>& params, const ModelParams<Real>& grads) {
  auto clipped = grads;
  clip_by_global_norm(clipped, config_.clip_norm);

  auto ps = params.tensors();
  const auto gs = clipped.tensors();
  if (ps.size() != gs.size()) throw ShapeError("optimizer: parameter and gradient tensor counts differ");
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (!ps[i]->same_shape(*gs[i])) throw ShapeError("optimizer: gradient shape differs from parameter");

  ++step_;
  if (config_.optimizer == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (std::size_t j = 0; j < ps[i]->size(); ++j)
        ps[i]->data[j] = static_cast<Real>(static_cast<double>(ps[i]->data[j]) -
                                           config_.learning_rate * static_cast<double>(gs[i]->data[j]));
    return;
  }

  if (first_moment_.empty()) {
    for (const auto* p : ps) {
      first_moment_.emplace_back(p->size(), 0.0);
      second_moment_.emplace_back(p->size(), 0.0);
    }
  }
  if (first_moment_.size() != ps.size()) throw ShapeError("optimizer state does not match parameters");

  const double b1 = config_.beta1, b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    if (m.size() != ps[i]->size()) throw ShapeError("optimizer state does not match parameters");
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = static_cast<double>(gs[i]->data[j]);
      m[j] = b1 * m[j] + (1 - b1) * g;
      v[j] = b2 * v[j] + (1 - b2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      ps[i]->data[j] = static_cast<Real>(static_cast<double>(ps[i]->data[j]) -
                                         config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon));
    }
  }
}

template <class Real>
double evaluate_loss(const ModelParams<Real>& params, const ModelConfig& config, std::span<const Sample<Real>> split) {
  if (split.empty()) throw EmptySplit("cannot evaluate loss on an empty split");
  return mean_loss(params, config, split);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::uint64_t round) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (round + 1)));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

template <class Real>
TrainResult<Real> train(const ModelParams<Real>& initial, const ModelConfig& model_config,
                        const TrainConfig& train_config, std::span<const Sample<Real>> train_set,
                        std::span<const Sample<Real>> val_set, const TrainCallbacks<Real>& callbacks) {
  if (train_set.empty()) throw EmptySplit("training split is empty");
  if (val_set.empty() && !callbacks.validation_loss) throw EmptySplit("validation split is empty");
  train_config.validate();
  initial.check_shapes(model_config);

  using Clock = std::chrono::steady_clock;
  ModelParams<Real> params = initial;
  Optimizer<Real> optimizer(train_config);
  TrainResult<Real> result{params, {}};
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  std::vector<Sample<Real>> batch;
  batch.reserve(train_config.batch_size);
  for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    const auto started = Clock::now();
    const auto order = shuffled_indices(train_set.size(), train_config.shuffle_seed, epoch);

    double loss_sum = 0;
    std::size_t example_count = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += train_config.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), begin + train_config.batch_size);
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train_set[order[i]]);
      const auto lg = loss_and_grads<Real>(params, model_config, batch);
      loss_sum += lg.loss * static_cast<double>(lg.examples);
      example_count += lg.examples;
      optimizer.step(params, lg.grads);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(example_count);
    rec.val_loss = callbacks.validation_loss ? callbacks.validation_loss(params, epoch)
                                             : evaluate_loss<Real>(params, model_config, val_set);
    rec.seconds = std::chrono::duration<double>(Clock::now() - started).count();
    result.history.epochs.push_back(rec);

    if (rec.val_loss < best) {
      best = rec.val_loss;
      since_best = 0;
      result.best_params = params;
      result.history.best_epoch = epoch;
      if (callbacks.on_improvement) callbacks.on_improvement(params, rec);
    } else {
      ++since_best;
    }
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
    if (since_best > train_config.patience) {
      result.history.stopped_early = true;
      break;
    }
  }
  return result;
}

#define MERGECAP_INSTANTIATE_TRAINER(Real)                                                                      \
  template double global_norm<Real>(const ModelParams<Real>&);                                                  \
  template double clip_by_global_norm<Real>(ModelParams<Real>&, double);                                        \
  template class Optimizer<Real>;                                                                               \
  template double evaluate_loss<Real>(const ModelParams<Real>&, const ModelConfig&, std::span<const Sample<Real>>); \
  template TrainResult<Real> train<Real>(const ModelParams<Real>&, const ModelConfig&, const TrainConfig&,      \
                                         std::span<const Sample<Real>>, std::span<const Sample<Real>>,          \
                                         const TrainCallbacks<Real>&);

MERGECAP_INSTANTIATE_TRAINER(float)
MERGECAP_INSTANTIATE_TRAINER(double)

#undef MERGECAP_INSTANTIATE_TRAINER

}  // namespace mergecap
