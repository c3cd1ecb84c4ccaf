#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes are incompatible for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for misuse of the gradient machinery (backward on a non-scalar,
/// optimizer step without gradients, ...).
class GradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

// Type-erased handle the tape uses to reason about reachability.
struct Node {
  virtual ~Node() = default;
  bool requires_grad = false;
  bool is_leaf = true;
  bool grad_allocated = false;
  virtual void release_grad() = 0;
};

template <typename T>
struct TensorImpl final : Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;

  // Returns the gradient buffer, zero-initialising it on first use.
  T* grad_buffer() {
    if (!grad_allocated) {
      grad.assign(data.size(), T(0));
      grad_allocated = true;
    }
    return grad.data();
  }
  void release_grad() override {
    std::vector<T>().swap(grad);
    grad_allocated = false;
  }
};

}  // namespace detail

/// Dense row-major n-dimensional array that can participate in the gradient
/// tape. Copies share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }
  static Tensor from(Shape shape, std::initializer_list<T> values) {
    return Tensor(std::move(shape), std::vector<T>(values));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const;
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const { return impl_->is_leaf; }
  bool has_grad() const { return impl_->grad_allocated; }
  /// Gradient accumulated by backward(); empty span when absent.
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return {impl_->grad_buffer(), impl_->data.size()}; }
  void zero_grad() { impl_->release_grad(); }

  /// Deep copy of the values, off the tape and not requiring grad.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dc
