#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mergecap/tensor.hpp"
#include "mergecap/text_pipeline.hpp"

namespace mergecap {

// Shape of the merge captioning network:
//   prefix ids -> embedding (V x D) -> conv1d (F filters, kernel K, ReLU)
//     -> global max pool (F)
//   image feature (I) [-> optional dense(H, ReLU) projection]
//   concat -> dense(H, ReLU) -> dense(V) -> softmax
struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 256;
  std::size_t conv_filters = 512;
  std::size_t kernel = 3;
  std::size_t feature_dim = 2048;
  std::size_t hidden_dim = 512;
  std::size_t max_len = 40;
  bool image_projection = false;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
  std::size_t image_branch_width() const { return image_projection ? hidden_dim : feature_dim; }
  std::size_t merge_width() const { return conv_filters + image_branch_width(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TensorShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

// Canonical tensor order and shapes for a config. Checkpoints and optimizers
// rely on this order.
std::vector<TensorShape> parameter_manifest(const ModelConfig& config);

template <class Real>
struct ModelParams {
  Matrix<Real> embedding;    // V x D
  Matrix<Real> conv_w;       // F x (K*D)
  Matrix<Real> conv_b;       // 1 x F
  Matrix<Real> proj_w;       // H x I, empty unless image_projection
  Matrix<Real> proj_b;       // 1 x H, empty unless image_projection
  Matrix<Real> merge_w;      // H x (F + I) or H x (F + H)
  Matrix<Real> merge_b;      // 1 x H
  Matrix<Real> out_w;        // V x H
  Matrix<Real> out_b;        // 1 x V

  // Zero-filled tensors shaped for `config`.
  static ModelParams zeros(const ModelConfig& config);

  // Non-empty tensors in manifest order.
  std::vector<Matrix<Real>*> tensors();
  std::vector<const Matrix<Real>*> tensors() const;
  std::size_t parameter_count() const;

  // Throws ShapeMismatch when shapes differ from the manifest of `config`.
  void check_shapes(const ModelConfig& config) const;

  template <class Other>
  ModelParams<Other> cast() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases,
// deterministic from config.seed.
template <class Real>
ModelParams<Real> init_params(const ModelConfig& config);

// Glorot fan-in / fan-out for a weight tensor of the manifest.
std::pair<std::size_t, std::size_t> glorot_fans(const ModelConfig& config, const std::string& tensor_name);

// A teacher-forced training item: one caption paired with its image feature.
template <class Real>
struct Sample {
  std::span<const Real> feature;
  EncodedCaption caption;
};

// Next-word distribution given the caption prefix (padded with pad up to
// max_len internally; longer prefixes are a ShapeError).
template <class Real>
std::vector<Real> forward(const ModelParams<Real>& params, const ModelConfig& config, std::span<const Real> feature,
                          std::span<const int> prefix);

// Pre-softmax scores; used by the decoder to mask special ids.
template <class Real>
std::vector<Real> forward_logits(const ModelParams<Real>& params, const ModelConfig& config,
                                 std::span<const Real> feature, std::span<const int> prefix);

template <class Real>
struct LossAndGrads {
  double loss = 0;
  std::size_t examples = 0;
  ModelParams<Real> grads;
};

// Each caption of true length n expands into n-1 (prefix -> next token)
// examples; loss is the mean cross-entropy over all of them and grads its
// exact derivative. Throws EmptyBatch.
template <class Real>
LossAndGrads<Real> loss_and_grads(const ModelParams<Real>& params, const ModelConfig& config,
                                  std::span<const Sample<Real>> batch);

// Same mean loss without gradients. Also reports the example count.
template <class Real>
double mean_loss(const ModelParams<Real>& params, const ModelConfig& config, std::span<const Sample<Real>> batch,
                 std::size_t* examples = nullptr);

// Number of teacher-forced examples a caption expands into.
inline std::size_t expanded_examples(const EncodedCaption& c) { return c.true_length >= 1 ? c.true_length - 1 : 0; }

}  // namespace mergecap
