#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mergecap/tensor.hpp"

// Dense layer primitives with hand-written backward passes. Everything is a
// pure function of its arguments; forward caches are returned by value.
// Instantiated for float (training/inference) and double (gradient checks).
namespace mergecap::nn {

enum class Activation { kNone, kRelu };

// ---- embedding -------------------------------------------------------------

// Row i of the result is table.row(ids[i]). Throws IndexError.
template <class Real>
Matrix<Real> embedding_forward(std::span<const int> ids, const Matrix<Real>& table);

// Accumulates rows of d_out into d_table at ids.
template <class Real>
void embedding_backward(std::span<const int> ids, const Matrix<Real>& d_out, Matrix<Real>& d_table);

// ---- 1D convolution --------------------------------------------------------

// Filter bank is F x (K*D): filter f, tap k, channel d lives at (f, k*D + d).
// With input X (L x D) row-major, the window starting at t is the contiguous
// slice X.data[t*D, (t+K)*D).
template <class Real>
struct ConvCache {
  Matrix<Real> pre_activation;  // (L-K+1) x F
  Matrix<Real> output;          // after activation
};

// Valid convolution, stride 1, followed by `activation` (ReLU for the model).
// Throws SequenceTooShort when L < K, ShapeError on inconsistent shapes.
template <class Real>
ConvCache<Real> conv1d_forward(const Matrix<Real>& x, const Matrix<Real>& filters, std::span<const Real> bias,
                               std::size_t kernel, Activation activation = Activation::kRelu);

template <class Real>
struct ConvGrads {
  Matrix<Real> d_filters;
  std::vector<Real> d_bias;
  Matrix<Real> d_input;
};

template <class Real>
ConvGrads<Real> conv1d_backward(const Matrix<Real>& x, const Matrix<Real>& filters, std::size_t kernel,
                                const ConvCache<Real>& cache, const Matrix<Real>& d_output,
                                Activation activation = Activation::kRelu);

// ---- global max pooling ----------------------------------------------------

template <class Real>
struct PoolResult {
  std::vector<Real> values;         // per column max
  std::vector<std::size_t> argmax;  // smallest row on ties
};

// Throws EmptyInput when h has no rows.
template <class Real>
PoolResult<Real> global_max_pool(const Matrix<Real>& h);

// Routes upstream[f] to row argmax[f]; all other entries are zero.
template <class Real>
Matrix<Real> global_max_pool_backward(std::span<const std::size_t> argmax, std::size_t rows,
                                      std::span<const Real> upstream);

// ---- fully connected -------------------------------------------------------

template <class Real>
struct DenseCache {
  std::vector<Real> pre_activation;
  std::vector<Real> output;
};

// act(W x + b). Throws ShapeError.
template <class Real>
DenseCache<Real> dense_forward(std::span<const Real> x, const Matrix<Real>& weights, std::span<const Real> bias,
                               Activation activation);

template <class Real>
struct DenseGrads {
  Matrix<Real> d_weights;
  std::vector<Real> d_bias;
  std::vector<Real> d_input;
};

template <class Real>
DenseGrads<Real> dense_backward(std::span<const Real> x, const Matrix<Real>& weights, const DenseCache<Real>& cache,
                                std::span<const Real> d_output, Activation activation);

// In-place variant used on the hot path: adds into existing gradient buffers
// and writes d_input (resized as needed). Same math as dense_backward.
template <class Real>
void dense_backward_accumulate(std::span<const Real> x, const Matrix<Real>& weights, const DenseCache<Real>& cache,
                               std::span<const Real> d_output, Activation activation, Matrix<Real>& d_weights,
                               std::span<Real> d_bias, std::vector<Real>* d_input);

// ReLU derivative with the subgradient at 0 taken as 0.
template <class Real>
inline Real relu_grad(Real pre_activation) {
  return pre_activation > Real(0) ? Real(1) : Real(0);
}

// ---- softmax / loss --------------------------------------------------------

// Max-shifted softmax. Throws NumericError on non-finite input (-inf is
// accepted as a masked entry as long as one entry is finite).
template <class Real>
std::vector<Real> softmax(std::span<const Real> logits);

// Natural-log softmax computed in double; masked (-inf) entries stay -inf.
template <class Real>
std::vector<double> log_softmax(std::span<const Real> logits);

inline constexpr double kCrossEntropyFloor = 1e-12;

// -ln(max(p[target], 1e-12)). Throws IndexError.
template <class Real>
Real cross_entropy(std::span<const Real> probs, int target);

// d(-ln p[target]) / d logits for p = softmax(logits): p - onehot(target).
template <class Real>
std::vector<Real> softmax_cross_entropy_backward(std::span<const Real> probs, int target);

// ---- gradient checking -----------------------------------------------------

// Central differences over every entry of `params` (perturbed in place and
// restored). Returns max |a - n| / max(|a|, |n|, 1e-8).
double grad_check(const std::function<double()>& loss, std::span<double> params, std::span<const double> analytic,
                  double eps = 1e-5);

double relative_error(double analytic, double numeric);

}  // namespace mergecap::nn
