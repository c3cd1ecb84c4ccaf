#pragma once

#include <cstddef>
#include <span>

#include "deepconsensus/autodiff/tensor.h"

namespace dc::nn {

inline constexpr double kLeakySlope = 0.01;

/// Same-padded cross-correlation. x: [N,C,H,W], weight: [F,C,k,k] with k odd,
/// bias: [F]. Padding is (k-1)/2, so stride 1 preserves H and W.
/// Lowered to im2col followed by a matrix product per sample.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1);

/// Non-overlapping window max. The gradient goes to the first maximal element
/// of each window in row-major order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t factor);

/// Per-channel batch normalisation state. gamma/beta are learnable; running
/// statistics change only in training mode.
template <typename T>
struct BatchNormState {
  explicit BatchNormState(std::size_t channels);

  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  bool training = true;

  std::size_t channels() const { return gamma.numel(); }
};

/// x: [N,C,H,W] or [N,C]. Training mode normalises with biased batch
/// statistics and folds the unbiased variance into the running estimate.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state);

/// x if x > 0, alpha * x otherwise (slope alpha at exactly zero).
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha = T(kLeakySlope));

/// x: [N,in], weight: [out,in], bias: [out] -> [N,out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Mean over the batch of -log softmax(logits)[target]. logits: [N,K].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets);

/// [N, ...] -> [N, prod(...)]
template <typename T>
Tensor<T> flatten(const Tensor<T>& x);

/// [N,C,H,W] -> [N,C], summing over rows and columns.
template <typename T>
Tensor<T> spatial_sum(const Tensor<T>& x);

/// First `count` columns of a [N,K] matrix.
template <typename T>
Tensor<T> slice_columns(const Tensor<T>& x, std::size_t count);

}  // namespace dc::nn
