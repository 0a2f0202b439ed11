#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mergecap/model.hpp"

namespace mergecap {

// A small 64-bit model plus a batch of random captions whose forward pass
// keeps every ReLU pre-activation at least `margin` away from zero and every
// positive pooled maximum `margin` above its runner-up, so central
// differences never straddle a kink.
struct GradCheckProblem {
  ModelConfig config;
  ModelParams<double> params;
  std::vector<std::vector<double>> features;
  std::vector<EncodedCaption> captions;
  std::uint64_t accepted_seed = 0;

  std::vector<Sample<double>> samples() const;
};

// Tries seeds seed, seed+1, ... until the probe is smooth. Throws
// NumericError after `max_attempts`.
GradCheckProblem make_grad_check_problem(const ModelConfig& config, std::size_t batch_size, double margin,
                                         std::size_t max_attempts = 1000);

// Smallest distance from a kink over the whole batch (see above).
double kink_distance(const GradCheckProblem& problem);

struct GroupError {
  std::string name;
  double max_relative_error = 0;
};

// Compares loss_and_grads against central differences per parameter tensor.
// `flip_sign` negates the analytic gradient, to prove the check can fail.
std::vector<GroupError> check_model_gradients(GradCheckProblem& problem, double eps, bool flip_sign = false);

}  // namespace mergecap
