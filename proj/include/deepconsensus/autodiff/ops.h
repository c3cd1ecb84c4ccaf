#pragma once

#include <cstddef>

#include "deepconsensus/autodiff/tensor.h"

namespace dc {

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { neg, exp, log, sqrt };

/// Output shape of trailing-dimension broadcasting; throws ShapeError when the
/// shapes are incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::div, a, b); }
template <typename T>
Tensor<T> neg(const Tensor<T>& a) { return elementwise(UnaryOp::neg, a); }
template <typename T>
Tensor<T> exp(const Tensor<T>& a) { return elementwise(UnaryOp::exp, a); }
template <typename T>
Tensor<T> log(const Tensor<T>& a) { return elementwise(UnaryOp::log, a); }
template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) { return elementwise(UnaryOp::sqrt, a); }

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

/// Multiplies every element by a constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// [m x k] . [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// 2-D transpose.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
/// Sum over one axis; the axis is removed from the result.
template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

}  // namespace dc
