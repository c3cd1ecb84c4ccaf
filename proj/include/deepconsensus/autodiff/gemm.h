#pragma once

#include <cstddef>

namespace dc::linalg {

/// Row-major C = alpha * op(A) * op(B) + beta * C, where op(A) is m x k and
/// op(B) is k x n. Leading dimensions are the row strides of the stored
/// (untransposed) matrices.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

}  // namespace dc::linalg
