#include "mergecap/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mergecap/errors.hpp"
#include "mergecap/nn.hpp"

namespace mergecap {

void ModelConfig::validate() const {
  if (vocab_size < static_cast<std::size_t>(Vocabulary::kNumSpecial)) throw ConfigError("vocab_size must cover the 4 special ids");
  if (embedding_dim == 0 || conv_filters == 0 || kernel == 0 || feature_dim == 0 || hidden_dim == 0)
    throw ConfigError("all model dimensions must be >= 1");
  if (max_len < 3) throw ConfigError("max_len must be >= 3");
  if (kernel > max_len) throw ConfigError("kernel must not exceed max_len");
}

std::vector<TensorShape> parameter_manifest(const ModelConfig& c) {
  std::vector<TensorShape> m{
      {"embedding", c.vocab_size, c.embedding_dim},
      {"conv_w", c.conv_filters, c.kernel * c.embedding_dim},
      {"conv_b", 1, c.conv_filters},
  };
  if (c.image_projection) {
    m.push_back({"proj_w", c.hidden_dim, c.feature_dim});
    m.push_back({"proj_b", 1, c.hidden_dim});
  }
  m.push_back({"merge_w", c.hidden_dim, c.merge_width()});
  m.push_back({"merge_b", 1, c.hidden_dim});
  m.push_back({"out_w", c.vocab_size, c.hidden_dim});
  m.push_back({"out_b", 1, c.vocab_size});
  return m;
}

std::pair<std::size_t, std::size_t> glorot_fans(const ModelConfig& c, const std::string& name) {
  if (name == "embedding") return {c.vocab_size, c.embedding_dim};
  if (name == "conv_w") return {c.kernel * c.embedding_dim, c.kernel * c.conv_filters};
  if (name == "proj_w") return {c.feature_dim, c.hidden_dim};
  if (name == "merge_w") return {c.merge_width(), c.hidden_dim};
  if (name == "out_w") return {c.hidden_dim, c.vocab_size};
  return {0, 0};
}

template <class Real>
ModelParams<Real> ModelParams<Real>::zeros(const ModelConfig& c) {
  c.validate();
  ModelParams p;
  p.embedding = Matrix<Real>(c.vocab_size, c.embedding_dim);
  p.conv_w = Matrix<Real>(c.conv_filters, c.kernel * c.embedding_dim);
  p.conv_b = Matrix<Real>(1, c.conv_filters);
  if (c.image_projection) {
    p.proj_w = Matrix<Real>(c.hidden_dim, c.feature_dim);
    p.proj_b = Matrix<Real>(1, c.hidden_dim);
  }
  p.merge_w = Matrix<Real>(c.hidden_dim, c.merge_width());
  p.merge_b = Matrix<Real>(1, c.hidden_dim);
  p.out_w = Matrix<Real>(c.vocab_size, c.hidden_dim);
  p.out_b = Matrix<Real>(1, c.vocab_size);
  return p;
}

template <class Real>
std::vector<Matrix<Real>*> ModelParams<Real>::tensors() {
  std::vector<Matrix<Real>*> t{&embedding, &conv_w, &conv_b};
  if (proj_w.size() != 0 || proj_b.size() != 0) {
    t.push_back(&proj_w);
    t.push_back(&proj_b);
  }
  t.insert(t.end(), {&merge_w, &merge_b, &out_w, &out_b});
  return t;
}

template <class Real>
std::vector<const Matrix<Real>*> ModelParams<Real>::tensors() const {
  auto mut = const_cast<ModelParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

template <class Real>
std::size_t ModelParams<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->size();
  return n;
}

template <class Real>
void ModelParams<Real>::check_shapes(const ModelConfig& config) const {
  const auto manifest = parameter_manifest(config);
  const auto ts = tensors();
  if (ts.size() != manifest.size())
    throw ShapeMismatch("expected " + std::to_string(manifest.size()) + " tensors, have " + std::to_string(ts.size()));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i]->rows != manifest[i].rows || ts[i]->cols != manifest[i].cols)
      throw ShapeMismatch(manifest[i].name + " is " + std::to_string(ts[i]->rows) + "x" +
                          std::to_string(ts[i]->cols) + ", config requires " + std::to_string(manifest[i].rows) +
                          "x" + std::to_string(manifest[i].cols));
  }
}

template <class Real>
template <class Other>
ModelParams<Other> ModelParams<Real>::cast() const {
  ModelParams<Other> out;
  auto convert = [](const Matrix<Real>& m) {
    Matrix<Other> r(m.rows, m.cols);
    std::transform(m.data.begin(), m.data.end(), r.data.begin(), [](Real v) { return static_cast<Other>(v); });
    return r;
  };
  out.embedding = convert(embedding);
  out.conv_w = convert(conv_w);
  out.conv_b = convert(conv_b);
  out.proj_w = convert(proj_w);
  out.proj_b = convert(proj_b);
  out.merge_w = convert(merge_w);
  out.merge_b = convert(merge_b);
  out.out_w = convert(out_w);
  out.out_b = convert(out_b);
  return out;
}

template <class Real>
ModelParams<Real> init_params(const ModelConfig& config) {
  auto p = ModelParams<Real>::zeros(config);
  std::mt19937_64 rng(config.seed);
  const auto manifest = parameter_manifest(config);
  const auto ts = p.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto [fan_in, fan_out] = glorot_fans(config, manifest[i].name);
    if (fan_in == 0) continue;  // bias
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Real& v : ts[i]->data) {
      // 53 random bits -> [0, 1); std::uniform_real_distribution is not portable.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v = static_cast<Real>((2.0 * u - 1.0) * bound);
    }
  }
  return p;
}

namespace {

template <class Real>
struct ForwardState {
  std::vector<int> ids;
  Matrix<Real> embedded;
  nn::ConvCache<Real> conv;
  nn::PoolResult<Real> pool;
  nn::DenseCache<Real> projection;
  std::vector<Real> merged;
  nn::DenseCache<Real> hidden;
  nn::DenseCache<Real> logits;
};

std::vector<int> pad_prefix(std::span<const int> prefix, std::size_t max_len) {
  if (prefix.size() > max_len)
    throw ShapeError("prefix of length " + std::to_string(prefix.size()) + " exceeds max_len " +
                     std::to_string(max_len));
  std::vector<int> ids(prefix.begin(), prefix.end());
  ids.resize(max_len, Vocabulary::kPad);
  return ids;
}

template <class Real>
ForwardState<Real> run_forward(const ModelParams<Real>& p, const ModelConfig& c, std::span<const Real> feature,
                               std::vector<int> ids) {
  if (feature.size() != c.feature_dim)
    throw ShapeError("image feature has " + std::to_string(feature.size()) + " values, model expects " +
                     std::to_string(c.feature_dim));
  ForwardState<Real> s;
  s.ids = std::move(ids);
  s.embedded = nn::embedding_forward<Real>(s.ids, p.embedding);
  s.conv = nn::conv1d_forward<Real>(s.embedded, p.conv_w, p.conv_b.data, c.kernel, nn::Activation::kRelu);
  s.pool = nn::global_max_pool(s.conv.output);

  s.merged = s.pool.values;
  if (c.image_projection) {
    s.projection = nn::dense_forward<Real>(feature, p.proj_w, p.proj_b.data, nn::Activation::kRelu);
    s.merged.insert(s.merged.end(), s.projection.output.begin(), s.projection.output.end());
  } else {
    s.merged.insert(s.merged.end(), feature.begin(), feature.end());
  }
  s.hidden = nn::dense_forward<Real>(s.merged, p.merge_w, p.merge_b.data, nn::Activation::kRelu);
  s.logits = nn::dense_forward<Real>(s.hidden.output, p.out_w, p.out_b.data, nn::Activation::kNone);
  return s;
}

// Adds scale * d(-ln p[target])/d(params) into g.
template <class Real>
void run_backward(const ModelParams<Real>& p, const ModelConfig& c, std::span<const Real> feature,
                  const ForwardState<Real>& s, std::span<const Real> probs, int target, Real scale,
                  ModelParams<Real>& g) {
  auto d_logits = nn::softmax_cross_entropy_backward<Real>(probs, target);
  for (Real& v : d_logits) v *= scale;

  std::vector<Real> d_hidden;
  nn::dense_backward_accumulate<Real>(s.hidden.output, p.out_w, s.logits, d_logits, nn::Activation::kNone, g.out_w,
                                      g.out_b.data, &d_hidden);
  std::vector<Real> d_merged;
  nn::dense_backward_accumulate<Real>(s.merged, p.merge_w, s.hidden, d_hidden, nn::Activation::kRelu, g.merge_w,
                                      g.merge_b.data, &d_merged);

  const std::span<const Real> d_pooled(d_merged.data(), c.conv_filters);
  if (c.image_projection) {
    const std::span<const Real> d_image(d_merged.data() + c.conv_filters, c.hidden_dim);
    nn::dense_backward_accumulate<Real>(feature, p.proj_w, s.projection, d_image, nn::Activation::kRelu, g.proj_w,
                                        g.proj_b.data, nullptr);
  }

  const auto d_conv_out = nn::global_max_pool_backward<Real>(s.pool.argmax, s.conv.output.rows, d_pooled);
  const auto conv_g = nn::conv1d_backward<Real>(s.embedded, p.conv_w, c.kernel, s.conv, d_conv_out,
                                                nn::Activation::kRelu);
  for (std::size_t i = 0; i < g.conv_w.size(); ++i) g.conv_w.data[i] += conv_g.d_filters.data[i];
  for (std::size_t i = 0; i < g.conv_b.size(); ++i) g.conv_b.data[i] += conv_g.d_bias[i];
  nn::embedding_backward<Real>(s.ids, conv_g.d_input, g.embedding);
}

template <class Real>
void check_batch(const ModelConfig& c, std::span<const Sample<Real>> batch) {
  if (batch.empty()) throw EmptyBatch("loss requested over an empty batch");
  for (const auto& item : batch) {
    if (item.caption.ids.size() != c.max_len)
      throw ShapeError("caption length " + std::to_string(item.caption.ids.size()) + " != max_len " +
                       std::to_string(c.max_len));
    if (item.caption.true_length < 2 || item.caption.true_length > c.max_len)
      throw ShapeError("caption true_length out of range");
  }
}

}  // namespace

template <class Real>
std::vector<Real> forward_logits(const ModelParams<Real>& params, const ModelConfig& config,
                                 std::span<const Real> feature, std::span<const int> prefix) {
  return run_forward(params, config, feature, pad_prefix(prefix, config.max_len)).logits.output;
}

template <class Real>
std::vector<Real> forward(const ModelParams<Real>& params, const ModelConfig& config, std::span<const Real> feature,
                          std::span<const int> prefix) {
  const auto logits = forward_logits(params, config, feature, prefix);
  return nn::softmax<Real>(logits);
}

template <class Real>
LossAndGrads<Real> loss_and_grads(const ModelParams<Real>& params, const ModelConfig& config,
                                  std::span<const Sample<Real>> batch) {
  check_batch(config, batch);
  std::size_t total = 0;
  for (const auto& item : batch) total += expanded_examples(item.caption);
  const Real scale = Real(1) / static_cast<Real>(total);

  LossAndGrads<Real> out{0.0, total, ModelParams<Real>::zeros(config)};
  for (const auto& item : batch) {
    const auto& ids = item.caption.ids;
    for (std::size_t t = 0; t + 1 < item.caption.true_length; ++t) {
      const auto state = run_forward(params, config, item.feature,
                                     pad_prefix(std::span<const int>(ids.data(), t + 1), config.max_len));
      const auto probs = nn::softmax<Real>(state.logits.output);
      const int target = ids[t + 1];
      out.loss += static_cast<double>(nn::cross_entropy<Real>(probs, target));
      run_backward<Real>(params, config, item.feature, state, probs, target, scale, out.grads);
    }
  }
  out.loss /= static_cast<double>(total);
  return out;
}

template <class Real>
double mean_loss(const ModelParams<Real>& params, const ModelConfig& config, std::span<const Sample<Real>> batch,
                 std::size_t* examples) {
  check_batch(config, batch);
  double sum = 0;
  std::size_t total = 0;
  for (const auto& item : batch) {
    const auto& ids = item.caption.ids;
    for (std::size_t t = 0; t + 1 < item.caption.true_length; ++t) {
      const auto probs = forward(params, config, item.feature, std::span<const int>(ids.data(), t + 1));
      sum += static_cast<double>(nn::cross_entropy<Real>(probs, ids[t + 1]));
      ++total;
    }
  }
  if (examples) *examples = total;
  return sum / static_cast<double>(total);
}

#define MERGECAP_INSTANTIATE_MODEL(Real)                                                                         \
  template struct ModelParams<Real>;                                                                             \
  template ModelParams<Real> init_params<Real>(const ModelConfig&);                                              \
  template std::vector<Real> forward<Real>(const ModelParams<Real>&, const ModelConfig&, std::span<const Real>,  \
                                           std::span<const int>);                                                \
  template std::vector<Real> forward_logits<Real>(const ModelParams<Real>&, const ModelConfig&,                  \
                                                  std::span<const Real>, std::span<const int>);                  \
  template LossAndGrads<Real> loss_and_grads<Real>(const ModelParams<Real>&, const ModelConfig&,                 \
                                                   std::span<const Sample<Real>>);                               \
  template double mean_loss<Real>(const ModelParams<Real>&, const ModelConfig&, std::span<const Sample<Real>>, \
                                  std::size_t*);

MERGECAP_INSTANTIATE_MODEL(float)
MERGECAP_INSTANTIATE_MODEL(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

#undef MERGECAP_INSTANTIATE_MODEL

}  // namespace mergecap
