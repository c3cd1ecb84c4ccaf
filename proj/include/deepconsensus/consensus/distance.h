#pragma once

#include "deepconsensus/autodiff/tensor.h"

namespace dc::consensus {

inline constexpr double kCosineEps = 1e-8;

/// Pairwise cosine similarity between the rows of a [N,D] and b [K,D]:
/// dot / (|a| |b| + eps). A zero row scores 0 against everything.
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b, T eps = T(kCosineEps));

/// Pairwise negated Euclidean distance, -|a_n - b_k|, so larger means closer.
/// The gradient at coincident points is taken as zero.
template <typename T>
Tensor<T> neg_euclidean_distance(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace dc::consensus
