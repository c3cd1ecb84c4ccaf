#include "deepconsensus/autodiff/gemm.h"

#include <Eigen/Core>

namespace dc::linalg {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  using CMap = Eigen::Map<const Mat, 0, Stride>;
  using MMap = Eigen::Map<Mat, 0, Stride>;
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);

  MMap cm(c, em, en, Stride(static_cast<Eigen::Index>(ldc)));
  if (beta == T(0)) {
    cm.setZero();
  } else if (beta != T(1)) {
    cm *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;

  const Eigen::Index a_rows = trans_a ? ek : em;
  const Eigen::Index a_cols = trans_a ? em : ek;
  const Eigen::Index b_rows = trans_b ? en : ek;
  const Eigen::Index b_cols = trans_b ? ek : en;
  CMap am(a, a_rows, a_cols, Stride(static_cast<Eigen::Index>(lda)));
  CMap bm(b, b_rows, b_cols, Stride(static_cast<Eigen::Index>(ldb)));

  if (!trans_a && !trans_b) {
    cm.noalias() += alpha * am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += alpha * am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += alpha * am * bm.transpose();
  } else {
    cm.noalias() += alpha * am.transpose() * bm.transpose();
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*,
                          std::size_t, const float*, std::size_t, float, float*, std::size_t);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, double,
                           const double*, std::size_t, const double*, std::size_t, double, double*,
                           std::size_t);

}  // namespace dc::linalg
