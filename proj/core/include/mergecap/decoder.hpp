#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mergecap/model.hpp"

namespace mergecap {

// Source of next-token log-probabilities for a prefix that starts with the
// start id. Masked tokens carry -infinity and are never expanded.
class NextTokenScorer {
 public:
  virtual ~NextTokenScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<double> log_probs(std::span<const int> prefix) const = 0;
};

// Adapts a trained model for one image. Start and pad logits are forced to
// -infinity before the softmax so neither can be emitted.
template <class Real>
class ModelScorer final : public NextTokenScorer {
 public:
  ModelScorer(const ModelParams<Real>& params, const ModelConfig& config, std::span<const Real> feature);

  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::vector<double> log_probs(std::span<const int> prefix) const override;

 private:
  const ModelParams<Real>& params_;
  const ModelConfig& config_;
  std::span<const Real> feature_;
};

struct Hypothesis {
  std::vector<int> ids;  // starts with the start id
  double log_prob = 0;   // sum of ln p(token)
  bool finished = false;
};

struct DecodeResult {
  std::vector<int> ids;
  double log_prob = 0;
};

struct BeamOptions {
  std::size_t beam_width = 5;
  std::size_t max_len = 40;
  // Rank finished hypotheses by log_prob / generated tokens instead of the raw
  // sum. Off by default.
  bool length_normalize = false;
};

// Appends the highest-scoring token (smallest id on ties) until end is
// emitted or the sequence holds max_len ids.
DecodeResult greedy_decode(const NextTokenScorer& scorer, std::size_t max_len);

// Full-vocabulary expansion of each live hypothesis, pruned to the open beam
// slots by summed log-prob (lexicographically smaller sequence on ties).
// Hypotheses that emit end move to the finished pool and give up their slot;
// the search ends when beam_width hypotheses have finished or nothing is
// live. Hypotheses reaching max_len without end are finished as they are.
DecodeResult beam_search(const NextTokenScorer& scorer, const BeamOptions& options);

inline constexpr double kExhaustiveLimit = 1e6;

// Enumerates every terminated sequence (ends with end, or reaches max_len)
// and returns the best under the beam_search ordering. Throws TooLarge when
// vocab_size^max_len exceeds kExhaustiveLimit.
DecodeResult exhaustive_oracle(const NextTokenScorer& scorer, std::size_t max_len);

// True when `a` ranks ahead of `b`: higher score, then lexicographically
// smaller ids.
bool ranks_before(double score_a, std::span<const int> a, double score_b, std::span<const int> b);

}  // namespace mergecap
