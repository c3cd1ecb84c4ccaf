#include "deepconsensus/autodiff/tensor.h"

#include <sstream>

#include "deepconsensus/autodiff/tape.h"

namespace dc {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor() = default;

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return impl_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  if (!value) impl_->release_grad();
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace dc
