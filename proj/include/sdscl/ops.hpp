#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sdscl/tensor.hpp"

namespace sdscl {

inline constexpr double kLeakySlope = 0.01;

// Elementwise binary ops on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Elementwise unary ops.
Tensor tanh(const Tensor& t);
Tensor exp(const Tensor& t);
/// Throws DomainError on any non-positive input.
Tensor log(const Tensor& t);
Tensor leaky_relu(const Tensor& t, double slope = kLeakySlope);
Tensor scale(const Tensor& t, double factor);

/// Stop-gradient marker: same values, no gradient flows back through it.
Tensor stop_gradient(const Tensor& t);

/// Batched matrix product over equal leading extents: [..,m,k] x [..,k,n] -> [..,m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor permute(const Tensor& t, std::span<const std::size_t> axes);
Tensor permute(const Tensor& t, std::initializer_list<std::size_t> axes);
Tensor reshape(const Tensor& t, Shape shape);
/// permute followed by reshape; the inverse rearrangement is applied on backward.
Tensor permute_reshape(const Tensor& t, std::span<const std::size_t> axes, Shape shape);

enum class ReduceMode { mean, sum, max };

/// Reduces over the given axes keeping them as size-1 extents.
/// Max routes the gradient to the first maximal element in row-major order.
Tensor reduce(const Tensor& t, std::span<const std::size_t> axes, ReduceMode mode);
Tensor reduce(const Tensor& t, std::initializer_list<std::size_t> axes, ReduceMode mode);
/// Sum / mean of every element, as a shape-[1] tensor.
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

Tensor concat(std::span<const Tensor> tensors, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> tensors, std::size_t axis);
Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length);

/// Affine map along `axis`: out[.., j, ..] = sum_c W[j, c] * t[.., c, ..] + b[j].
/// `bias` may be undefined for a purely linear map.
Tensor linear(const Tensor& t, const Tensor& weight, const Tensor& bias, std::size_t axis = 1);

enum class Mode { train, eval };

/// Running statistics of a batch-norm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  Tensor tracked;  ///< number of train-mode batches seen, stored as a [1] tensor for checkpoints
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0);

  bool has_statistics() const { return tracked.defined() && tracked.item() > 0.0; }
};

/// Per-channel normalization over every axis except axis 1.
/// Train mode uses batch statistics and updates `state`; eval mode uses the
/// running statistics and throws StateError if no train step happened yet.
Tensor batch_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode);

/// Depthwise temporal convolution on [B,C,T,N] with kernel [C,3] and one frame of
/// zero padding per end: out[t] = k0*x[t-1] + k1*x[t] + k2*x[t+1].
Tensor conv1d_temporal(const Tensor& t, const Tensor& kernel);

/// Unit-norm slices along `axis`. Throws DegenerateInputError when a norm is <= 1e-12.
Tensor l2_normalize(const Tensor& t, std::size_t axis);

/// Numerically stable log-sum-exp along `axis`, keeping the axis.
Tensor logsumexp(const Tensor& t, std::size_t axis);
Tensor softmax(const Tensor& t, std::size_t axis);

}  // namespace sdscl
