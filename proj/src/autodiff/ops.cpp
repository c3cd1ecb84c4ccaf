#include "deepconsensus/autodiff/ops.h"

#include <algorithm>
#include <cmath>

#include "deepconsensus/autodiff/gemm.h"
#include "deepconsensus/autodiff/tape.h"

namespace dc {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Flat source offset for every element of `out` when `in` is broadcast to it.
std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  Shape padded(rank, 1);
  std::copy(in.begin(), in.end(), padded.begin() + static_cast<std::ptrdiff_t>(rank - in.size()));
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    stride[i] = padded[i] == 1 ? 0 : s;
    s *= padded[i];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    offsets[flat] = off;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (out[d] - 1);
      counter[d] = 0;
    }
  }
  return offsets;
}

template <typename T, typename F>
void for_each_pair(std::size_t n, const std::vector<std::size_t>* ia,
                   const std::vector<std::size_t>* ib, F&& f) {
  for (std::size_t i = 0; i < n; ++i) f(i, ia ? (*ia)[i] : i, ib ? (*ib)[i] : i);
}

}  // namespace

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  // Offset maps are only materialised for operands that actually broadcast.
  std::shared_ptr<std::vector<std::size_t>> ia, ib;
  if (a.shape() != out_shape) ia = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(a.shape(), out_shape));
  if (b.shape() != out_shape) ib = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(b.shape(), out_shape));

  Tensor<T> out(out_shape);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for_each_pair<T>(n, ia.get(), ib.get(), [&](std::size_t i, std::size_t ja, std::size_t jb) {
    switch (op) {
      case BinaryOp::add: o[i] = x[ja] + y[jb]; break;
      case BinaryOp::sub: o[i] = x[ja] - y[jb]; break;
      case BinaryOp::mul: o[i] = x[ja] * y[jb]; break;
      case BinaryOp::div: o[i] = x[ja] / y[jb]; break;
    }
  });

  if (detail::needs_grad({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    detail::record_op(out, {&a, &b}, [op, ai, bi, oi, ia, ib, n] {
      const T* g = oi->grad.data();
      const T* x = ai->data.data();
      const T* y = bi->data.data();
      if (ai->requires_grad) {
        T* gx = ai->grad_buffer();
        for_each_pair<T>(n, ia.get(), ib.get(), [&](std::size_t i, std::size_t ja, std::size_t jb) {
          switch (op) {
            case BinaryOp::add:
            case BinaryOp::sub: gx[ja] += g[i]; break;
            case BinaryOp::mul: gx[ja] += g[i] * y[jb]; break;
            case BinaryOp::div: gx[ja] += g[i] / y[jb]; break;
          }
        });
      }
      if (bi->requires_grad) {
        T* gy = bi->grad_buffer();
        for_each_pair<T>(n, ia.get(), ib.get(), [&](std::size_t i, std::size_t ja, std::size_t jb) {
          switch (op) {
            case BinaryOp::add: gy[jb] += g[i]; break;
            case BinaryOp::sub: gy[jb] -= g[i]; break;
            case BinaryOp::mul: gy[jb] += g[i] * x[ja]; break;
            case BinaryOp::div: gy[jb] -= g[i] * x[ja] / (y[jb] * y[jb]); break;
          }
        });
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (op) {
      case UnaryOp::neg: o[i] = -x[i]; break;
      case UnaryOp::exp: o[i] = std::exp(x[i]); break;
      case UnaryOp::log: o[i] = std::log(x[i]); break;
      case UnaryOp::sqrt: o[i] = std::sqrt(x[i]); break;
    }
  }
  if (detail::needs_grad({&a})) {
    auto ai = a.impl(), oi = out.impl();
    detail::record_op(out, {&a}, [op, ai, oi] {
      const T* g = oi->grad.data();
      const T* x = ai->data.data();
      const T* y = oi->data.data();
      T* gx = ai->grad_buffer();
      for (std::size_t i = 0; i < ai->data.size(); ++i) {
        switch (op) {
          case UnaryOp::neg: gx[i] -= g[i]; break;
          case UnaryOp::exp: gx[i] += g[i] * y[i]; break;
          case UnaryOp::log: gx[i] += g[i] / x[i]; break;
          case UnaryOp::sqrt: gx[i] += g[i] / (T(2) * y[i]); break;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = x[i] * factor;
  if (detail::needs_grad({&a})) {
    auto ai = a.impl(), oi = out.impl();
    detail::record_op(out, {&a}, [ai, oi, factor] {
      const T* g = oi->grad.data();
      T* gx = ai->grad_buffer();
      for (std::size_t i = 0; i < ai->data.size(); ++i) gx[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  linalg::gemm<T>(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
                  out.data().data(), n);
  if (detail::needs_grad({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    detail::record_op(out, {&a, &b}, [ai, bi, oi, m, k, n] {
      const T* g = oi->grad.data();
      if (ai->requires_grad) {
        // dA += dC . B^T
        linalg::gemm<T>(false, true, m, k, n, T(1), g, n, bi->data.data(), n, T(1),
                        ai->grad_buffer(), k);
      }
      if (bi->requires_grad) {
        // dB += A^T . dC
        linalg::gemm<T>(true, false, k, n, m, T(1), ai->data.data(), k, g, n, T(1),
                        bi->grad_buffer(), n);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out({c, r});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[j * r + i] = x[i * c + j];
  if (detail::needs_grad({&a})) {
    auto ai = a.impl(), oi = out.impl();
    detail::record_op(out, {&a}, [ai, oi, r, c] {
      const T* g = oi->grad.data();
      T* gx = ai->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (detail::needs_grad({&a})) {
    auto ai = a.impl(), oi = out.impl();
    detail::record_op(out, {&a}, [ai, oi] {
      const T* g = oi->grad.data();
      T* gx = ai->grad_buffer();
      for (std::size_t i = 0; i < ai->data.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  Tensor<T> out(Shape{1}, total);
  if (detail::needs_grad({&a})) {
    auto ai = a.impl(), oi = out.impl();
    detail::record_op(out, {&a}, [ai, oi] {
      const T g = oi->grad[0];
      T* gx = ai->grad_buffer();
      for (std::size_t i = 0; i < ai->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("sum: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  Tensor<T> out(os);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t p = 0; p < outer; ++p)
    for (std::size_t r = 0; r < len; ++r)
      for (std::size_t q = 0; q < inner; ++q) o[p * inner + q] += x[(p * len + r) * inner + q];
  if (detail::needs_grad({&a})) {
    auto ai = a.impl(), oi = out.impl();
    detail::record_op(out, {&a}, [ai, oi, outer, len, inner] {
      const T* g = oi->grad.data();
      T* gx = ai->grad_buffer();
      for (std::size_t p = 0; p < outer; ++p)
        for (std::size_t r = 0; r < len; ++r)
          for (std::size_t q = 0; q < inner; ++q) gx[(p * len + r) * inner + q] += g[p * inner + q];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

#define DC_INSTANTIATE_OPS(T)                                                    \
  template Tensor<T> elementwise<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> elementwise<T>(UnaryOp, const Tensor<T>&);                  \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> transpose<T>(const Tensor<T>&);                             \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                   \
  template Tensor<T> sum<T>(const Tensor<T>&, std::size_t);                      \
  template Tensor<T> mean<T>(const Tensor<T>&);

DC_INSTANTIATE_OPS(float)
DC_INSTANTIATE_OPS(double)

}  // namespace dc
