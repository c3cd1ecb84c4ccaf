#include "deepconsensus/consensus/distance.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "deepconsensus/autodiff/gemm.h"
#include "deepconsensus/autodiff/tape.h"

namespace dc::consensus {

namespace {

template <typename T>
void check_pair(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError(std::string(op) + ": summary " + shape_str(a.shape()) +
                     " and prototypes " + shape_str(b.shape()) + " disagree in dimension");
  }
}

template <typename T>
std::vector<T> row_norms(const T* m, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c] * m[r * cols + c];
    out[r] = std::sqrt(s);
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b, T eps) {
  check_pair(a, b, "cosine_similarity");
  const std::size_t N = a.dim(0), K = b.dim(0), D = a.dim(1);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  auto dots = std::make_shared<std::vector<T>>(N * K);
  linalg::gemm<T>(false, true, N, K, D, T(1), ad, D, bd, D, T(0), dots->data(), K);
  auto na = std::make_shared<std::vector<T>>(row_norms(ad, N, D));
  auto nb = std::make_shared<std::vector<T>>(row_norms(bd, K, D));

  Tensor<T> out({N, K});
  auto o = out.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      o[n * K + k] = std::clamp((*dots)[n * K + k] / ((*na)[n] * (*nb)[k] + eps), T(-1), T(1));

  if (detail::needs_grad({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    detail::record_op(out, {&a, &b}, [ai, bi, oi, dots, na, nb, eps, N, K, D] {
      const T* g = oi->grad.data();
      const T* ad = ai->data.data();
      const T* bd = bi->data.data();
      T* ga = ai->requires_grad ? ai->grad_buffer() : nullptr;
      T* gb = bi->requires_grad ? bi->grad_buffer() : nullptr;
      // s = dot / den, den = |a||b| + eps
      //   ds/da = b / den - dot |b| a / (|a| den^2)
      //   ds/db = a / den - dot |a| b / (|b| den^2)
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
          const T gi = g[n * K + k];
          if (gi == T(0)) continue;
          const T den = (*na)[n] * (*nb)[k] + eps;
          const T dot = (*dots)[n * K + k];
          const T direct = gi / den;
          const T* an = ad + n * D;
          const T* bk = bd + k * D;
          if (ga) {
            const T radial = (*na)[n] > T(0) ? gi * dot * (*nb)[k] / ((*na)[n] * den * den) : T(0);
            T* gan = ga + n * D;
            for (std::size_t d = 0; d < D; ++d) gan[d] += direct * bk[d] - radial * an[d];
          }
          if (gb) {
            const T radial = (*nb)[k] > T(0) ? gi * dot * (*na)[n] / ((*nb)[k] * den * den) : T(0);
            T* gbk = gb + k * D;
            for (std::size_t d = 0; d < D; ++d) gbk[d] += direct * an[d] - radial * bk[d];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> neg_euclidean_distance(const Tensor<T>& a, const Tensor<T>& b) {
  check_pair(a, b, "neg_euclidean_distance");
  const std::size_t N = a.dim(0), K = b.dim(0), D = a.dim(1);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  auto dist = std::make_shared<std::vector<T>>(N * K);
  Tensor<T> out({N, K});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      T s = T(0);
      for (std::size_t d = 0; d < D; ++d) {
        const T diff = ad[n * D + d] - bd[k * D + d];
        s += diff * diff;
      }
      (*dist)[n * K + k] = std::sqrt(s);
      out[n * K + k] = -(*dist)[n * K + k];
    }
  }
  if (detail::needs_grad({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    detail::record_op(out, {&a, &b}, [ai, bi, oi, dist, N, K, D] {
      const T* g = oi->grad.data();
      const T* ad = ai->data.data();
      const T* bd = bi->data.data();
      T* ga = ai->requires_grad ? ai->grad_buffer() : nullptr;
      T* gb = bi->requires_grad ? bi->grad_buffer() : nullptr;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
          const T r = (*dist)[n * K + k];
          if (r == T(0)) continue;
          const T coef = g[n * K + k] / r;
          for (std::size_t d = 0; d < D; ++d) {
            const T diff = ad[n * D + d] - bd[k * D + d];
            if (ga) ga[n * D + d] -= coef * diff;
            if (gb) gb[k * D + d] += coef * diff;
          }
        }
      }
    });
  }
  return out;
}

template Tensor<float> cosine_similarity<float>(const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> cosine_similarity<double>(const Tensor<double>&, const Tensor<double>&,
                                                  double);
template Tensor<float> neg_euclidean_distance<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> neg_euclidean_distance<double>(const Tensor<double>&,
                                                       const Tensor<double>&);

}  // namespace dc::consensus
