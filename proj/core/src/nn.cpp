#include "mergecap/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mergecap/errors.hpp"

namespace mergecap::nn {

namespace {

std::string shape_str(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

template <class Real>
Real activate(Real v, Activation a) {
  return (a == Activation::kRelu && !(v > Real(0))) ? Real(0) : v;
}

template <class Real>
Real activation_grad(Real pre, Activation a) {
  return a == Activation::kRelu ? relu_grad(pre) : Real(1);
}

}  // namespace

template <class Real>
Matrix<Real> embedding_forward(std::span<const int> ids, const Matrix<Real>& table) {
  Matrix<Real> out(ids.size(), table.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows)
      throw IndexError("embedding id " + std::to_string(id) + " outside table of " + std::to_string(table.rows));
    std::copy_n(table.row(static_cast<std::size_t>(id)).begin(), table.cols, out.row(i).begin());
  }
  return out;
}

template <class Real>
void embedding_backward(std::span<const int> ids, const Matrix<Real>& d_out, Matrix<Real>& d_table) {
  if (d_out.rows != ids.size() || d_out.cols != d_table.cols)
    throw ShapeError("embedding gradient " + shape_str(d_out.rows, d_out.cols));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= d_table.rows) throw IndexError("embedding id out of range");
    auto dst = d_table.row(static_cast<std::size_t>(id));
    auto src = d_out.row(i);
    for (std::size_t d = 0; d < d_table.cols; ++d) dst[d] += src[d];
  }
}

template <class Real>
ConvCache<Real> conv1d_forward(const Matrix<Real>& x, const Matrix<Real>& filters, std::span<const Real> bias,
                               std::size_t kernel, Activation activation) {
  const std::size_t dim = x.cols;
  if (kernel == 0) throw ShapeError("kernel size must be >= 1");
  if (filters.cols != kernel * dim || bias.size() != filters.rows)
    throw ShapeError("filter bank " + shape_str(filters.rows, filters.cols) + " incompatible with kernel " +
                     std::to_string(kernel) + " over " + std::to_string(dim) + " channels");
  if (x.rows < kernel)
    throw SequenceTooShort("length " + std::to_string(x.rows) + " shorter than kernel " + std::to_string(kernel));

  const std::size_t steps = x.rows - kernel + 1;
  const std::size_t width = kernel * dim;
  ConvCache<Real> cache{Matrix<Real>(steps, filters.rows), Matrix<Real>(steps, filters.rows)};
  for (std::size_t t = 0; t < steps; ++t) {
    const Real* window = x.data.data() + t * dim;
    for (std::size_t f = 0; f < filters.rows; ++f) {
      const Real* w = filters.data.data() + f * width;
      Real acc = bias[f];
      for (std::size_t j = 0; j < width; ++j) acc += window[j] * w[j];
      cache.pre_activation(t, f) = acc;
      cache.output(t, f) = activate(acc, activation);
    }
  }
  return cache;
}

template <class Real>
ConvGrads<Real> conv1d_backward(const Matrix<Real>& x, const Matrix<Real>& filters, std::size_t kernel,
                                const ConvCache<Real>& cache, const Matrix<Real>& d_output, Activation activation) {
  const std::size_t dim = x.cols;
  const std::size_t width = kernel * dim;
  if (!d_output.same_shape(cache.pre_activation) || filters.cols != width ||
      cache.pre_activation.rows + kernel != x.rows + 1 || cache.pre_activation.cols != filters.rows)
    throw ShapeError("conv1d backward: cached state does not match inputs");

  ConvGrads<Real> g{Matrix<Real>(filters.rows, width), std::vector<Real>(filters.rows, Real(0)),
                    Matrix<Real>(x.rows, dim)};
  for (std::size_t t = 0; t < d_output.rows; ++t) {
    const Real* window = x.data.data() + t * dim;
    Real* d_window = g.d_input.data.data() + t * dim;
    for (std::size_t f = 0; f < filters.rows; ++f) {
      const Real upstream = d_output(t, f);
      if (upstream == Real(0)) continue;
      const Real delta = upstream * activation_grad(cache.pre_activation(t, f), activation);
      if (delta == Real(0)) continue;
      g.d_bias[f] += delta;
      Real* dw = g.d_filters.data.data() + f * width;
      const Real* w = filters.data.data() + f * width;
      for (std::size_t j = 0; j < width; ++j) {
        dw[j] += delta * window[j];
        d_window[j] += delta * w[j];
      }
    }
  }
  return g;
}

template <class Real>
PoolResult<Real> global_max_pool(const Matrix<Real>& h) {
  if (h.rows == 0) throw EmptyInput("global max pool over zero time steps");
  PoolResult<Real> r{std::vector<Real>(h.row(0).begin(), h.row(0).end()), std::vector<std::size_t>(h.cols, 0)};
  for (std::size_t t = 1; t < h.rows; ++t) {
    for (std::size_t f = 0; f < h.cols; ++f) {
      if (h(t, f) > r.values[f]) {
        r.values[f] = h(t, f);
        r.argmax[f] = t;
      }
    }
  }
  return r;
}

template <class Real>
Matrix<Real> global_max_pool_backward(std::span<const std::size_t> argmax, std::size_t rows,
                                      std::span<const Real> upstream) {
  if (argmax.size() != upstream.size()) throw ShapeError("pool backward: argmax/upstream size mismatch");
  Matrix<Real> d(rows, upstream.size());
  for (std::size_t f = 0; f < upstream.size(); ++f) {
    if (argmax[f] >= rows) throw ShapeError("pool backward: argmax outside input");
    d(argmax[f], f) = upstream[f];
  }
  return d;
}

template <class Real>
DenseCache<Real> dense_forward(std::span<const Real> x, const Matrix<Real>& weights, std::span<const Real> bias,
                               Activation activation) {
  if (x.size() != weights.cols || bias.size() != weights.rows)
    throw ShapeError("dense " + shape_str(weights.rows, weights.cols) + " given input " + std::to_string(x.size()) +
                     " and bias " + std::to_string(bias.size()));
  DenseCache<Real> c{std::vector<Real>(weights.rows), std::vector<Real>(weights.rows)};
  for (std::size_t m = 0; m < weights.rows; ++m) {
    const Real* w = weights.data.data() + m * weights.cols;
    Real acc = bias[m];
    for (std::size_t n = 0; n < weights.cols; ++n) acc += w[n] * x[n];
    c.pre_activation[m] = acc;
    c.output[m] = activate(acc, activation);
  }
  return c;
}

template <class Real>
void dense_backward_accumulate(std::span<const Real> x, const Matrix<Real>& weights, const DenseCache<Real>& cache,
                               std::span<const Real> d_output, Activation activation, Matrix<Real>& d_weights,
                               std::span<Real> d_bias, std::vector<Real>* d_input) {
  if (x.size() != weights.cols || d_output.size() != weights.rows || cache.pre_activation.size() != weights.rows ||
      !d_weights.same_shape(weights) || d_bias.size() != weights.rows)
    throw ShapeError("dense backward: shapes disagree with " + shape_str(weights.rows, weights.cols));
  if (d_input) d_input->assign(weights.cols, Real(0));
  for (std::size_t m = 0; m < weights.rows; ++m) {
    const Real delta = d_output[m] * activation_grad(cache.pre_activation[m], activation);
    if (delta == Real(0)) continue;
    d_bias[m] += delta;
    Real* dw = d_weights.data.data() + m * weights.cols;
    const Real* w = weights.data.data() + m * weights.cols;
    for (std::size_t n = 0; n < weights.cols; ++n) dw[n] += delta * x[n];
    if (d_input) {
      Real* di = d_input->data();
      for (std::size_t n = 0; n < weights.cols; ++n) di[n] += delta * w[n];
    }
  }
}

template <class Real>
DenseGrads<Real> dense_backward(std::span<const Real> x, const Matrix<Real>& weights, const DenseCache<Real>& cache,
                                std::span<const Real> d_output, Activation activation) {
  DenseGrads<Real> g{Matrix<Real>(weights.rows, weights.cols), std::vector<Real>(weights.rows, Real(0)), {}};
  dense_backward_accumulate<Real>(x, weights, cache, d_output, activation, g.d_weights, g.d_bias, &g.d_input);
  return g;
}

template <class Real>
std::vector<Real> softmax(std::span<const Real> logits) {
  if (logits.empty()) throw NumericError("softmax of empty vector");
  Real mx = -std::numeric_limits<Real>::infinity();
  for (Real z : logits) {
    if (std::isnan(z) || z == std::numeric_limits<Real>::infinity()) throw NumericError("non-finite logit");
    mx = std::max(mx, z);
  }
  if (!std::isfinite(mx)) throw NumericError("all logits masked");
  std::vector<Real> p(logits.size());
  Real sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (Real& v : p) v /= sum;
  return p;
}

template <class Real>
std::vector<double> log_softmax(std::span<const Real> logits) {
  if (logits.empty()) throw NumericError("log_softmax of empty vector");
  double mx = -std::numeric_limits<double>::infinity();
  for (Real z : logits) {
    if (std::isnan(z) || z == std::numeric_limits<Real>::infinity()) throw NumericError("non-finite logit");
    mx = std::max(mx, static_cast<double>(z));
  }
  if (!std::isfinite(mx)) throw NumericError("all logits masked");
  double sum = 0;
  for (Real z : logits) sum += std::exp(static_cast<double>(z) - mx);
  const double log_norm = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - log_norm;
  return out;
}

template <class Real>
Real cross_entropy(std::span<const Real> probs, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= probs.size())
    throw IndexError("target " + std::to_string(target) + " outside distribution of " + std::to_string(probs.size()));
  const Real p = std::max(probs[static_cast<std::size_t>(target)], static_cast<Real>(kCrossEntropyFloor));
  return -std::log(p);
}

template <class Real>
std::vector<Real> softmax_cross_entropy_backward(std::span<const Real> probs, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= probs.size()) throw IndexError("target out of range");
  std::vector<Real> d(probs.begin(), probs.end());
  d[static_cast<std::size_t>(target)] -= Real(1);
  return d;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const std::function<double()>& loss, std::span<double> params, std::span<const double> analytic,
                  double eps) {
  if (params.size() != analytic.size()) throw ShapeError("grad_check: analytic gradient size mismatch");
  if (!(eps > 0)) throw ConfigError("grad_check: eps must be positive");
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = loss();
    params[i] = saved - eps;
    const double down = loss();
    params[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * eps)));
  }
  return worst;
}

#define MERGECAP_INSTANTIATE_NN(Real)                                                                              \
  template Matrix<Real> embedding_forward<Real>(std::span<const int>, const Matrix<Real>&);                        \
  template void embedding_backward<Real>(std::span<const int>, const Matrix<Real>&, Matrix<Real>&);                \
  template ConvCache<Real> conv1d_forward<Real>(const Matrix<Real>&, const Matrix<Real>&, std::span<const Real>,   \
                                                std::size_t, Activation);                                          \
  template ConvGrads<Real> conv1d_backward<Real>(const Matrix<Real>&, const Matrix<Real>&, std::size_t,            \
                                                 const ConvCache<Real>&, const Matrix<Real>&, Activation);         \
  template PoolResult<Real> global_max_pool<Real>(const Matrix<Real>&);                                            \
  template Matrix<Real> global_max_pool_backward<Real>(std::span<const std::size_t>, std::size_t,                  \
                                                       std::span<const Real>);                                     \
  template DenseCache<Real> dense_forward<Real>(std::span<const Real>, const Matrix<Real>&, std::span<const Real>, \
                                                Activation);                                                       \
  template DenseGrads<Real> dense_backward<Real>(std::span<const Real>, const Matrix<Real>&,                       \
                                                 const DenseCache<Real>&, std::span<const Real>, Activation);      \
  template void dense_backward_accumulate<Real>(std::span<const Real>, const Matrix<Real>&,                        \
                                                const DenseCache<Real>&, std::span<const Real>, Activation,        \
                                                Matrix<Real>&, std::span<Real>, std::vector<Real>*);               \
  template std::vector<Real> softmax<Real>(std::span<const Real>);                                                 \
  template std::vector<double> log_softmax<Real>(std::span<const Real>);                                           \
  template Real cross_entropy<Real>(std::span<const Real>, int);                                                   \
  template std::vector<Real> softmax_cross_entropy_backward<Real>(std::span<const Real>, int);

MERGECAP_INSTANTIATE_NN(float)
MERGECAP_INSTANTIATE_NN(double)

#undef MERGECAP_INSTANTIATE_NN

}  // namespace mergecap::nn
