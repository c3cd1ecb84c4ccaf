#pragma once

#include <cstdint>
#include <vector>

#include "deepconsensus/autodiff/tensor.h"

namespace dc {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments start at zero; step() consumes the
/// gradients of every parameter and releases them afterwards.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions options = {});

  /// Throws GradError if any parameter has no gradient.
  void step();
  void zero_grad();

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  std::int64_t step_count() const { return t_; }
  const AdamOptions& options() const { return options_; }

  const std::vector<T>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  AdamOptions options_;
  std::int64_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace dc
