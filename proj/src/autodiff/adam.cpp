#include "deepconsensus/autodiff/adam.h"

#include <cmath>
#include <string>

namespace dc {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw GradError("adam: parameter " + std::to_string(i) + " of shape " +
                      shape_str(params_[i].shape()) + " has no gradient");
    }
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const T lr = static_cast<T>(options_.lr);
  const T eps = static_cast<T>(options_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].data();
    auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = static_cast<T>(b1) * m[j] + static_cast<T>(1.0 - b1) * g[j];
      v[j] = static_cast<T>(b2) * v[j] + static_cast<T>(1.0 - b2) * g[j] * g[j];
      const T m_hat = m[j] / static_cast<T>(c1);
      const T v_hat = v[j] / static_cast<T>(c2);
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
  zero_grad();
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dc
