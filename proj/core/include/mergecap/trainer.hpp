#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mergecap/model.hpp"

namespace mergecap {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::uint64_t shuffle_seed = 0;
  double clip_norm = 5.0;  // <= 0 disables clipping

  // Throws ConfigError.
  void validate() const;
};

// Global L2 norm over every gradient tensor.
template <class Real>
double global_norm(const ModelParams<Real>& grads);

// Rescales grads so their global norm is at most max_norm. Returns the norm
// before clipping.
template <class Real>
double clip_by_global_norm(ModelParams<Real>& grads, double max_norm);

// Plain SGD and bias-corrected Adam over the tensors of ModelParams. State
// buffers are created lazily on the first step and shape-checked afterwards.
template <class Real>
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& config);

  // Clips (if configured) a copy of grads, then updates params in place.
  // Throws ShapeError when params, grads and state disagree.
  void step(ModelParams<Real>& params, const ModelParams<Real>& grads);

  std::uint64_t steps_taken() const { return step_; }

 private:
  TrainConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based; argmin val_loss, earliest on ties
  bool stopped_early = false;
};

template <class Real>
struct TrainResult {
  ModelParams<Real> best_params;
  TrainHistory history;
};

template <class Real>
struct TrainCallbacks {
  // Called with the new best parameters whenever validation loss improves.
  std::function<void(const ModelParams<Real>&, const EpochRecord&)> on_improvement;
  // Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
  // Overrides the validation loss computation; used to script stopping
  // behaviour in tests. Defaults to evaluate_loss on the validation split.
  std::function<double(const ModelParams<Real>&, std::size_t epoch)> validation_loss;
};

// Mean teacher-forced cross-entropy; no parameter mutation. Throws EmptySplit.
template <class Real>
double evaluate_loss(const ModelParams<Real>& params, const ModelConfig& config, std::span<const Sample<Real>> split);

// Shuffled mini-batch training with validation early stopping: stops once
// validation loss has failed to improve for more than `patience` consecutive
// epochs, or at max_epochs. Returns the parameters of the best epoch.
template <class Real>
TrainResult<Real> train(const ModelParams<Real>& initial, const ModelConfig& model_config,
                        const TrainConfig& train_config, std::span<const Sample<Real>> train_set,
                        std::span<const Sample<Real>> val_set, const TrainCallbacks<Real>& callbacks = {});

// Fisher-Yates with std::mt19937_64 and a modulo draw, so orderings do not
// depend on the standard library's distribution implementations.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::uint64_t round);

}  // namespace mergecap
