#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "deepconsensus/autodiff/tape.h"
#include "deepconsensus/autodiff/tensor.h"

namespace dc::testing {

struct GradReport {
  double max_error = 0.0;
  std::size_t checked = 0;
};

// Compares analytic gradients of loss() against central differences.
// |analytic - numeric| / max(1, |numeric|), worst case over the probed entries.
// With max_per_tensor > 0 only that many randomly chosen entries per tensor are probed.
inline GradReport check_gradients(const std::function<Tensord()>& loss, std::vector<Tensord> params,
                                  double h = 1e-6, std::size_t max_per_tensor = 0,
                                  unsigned seed = 7) {
  for (auto& p : params) p.zero_grad();
  auto l = loss();
  backward(l);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
    p.zero_grad();
  }
  GradReport report;
  std::mt19937 rng(seed);
  NoGradGuard guard;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    std::vector<std::size_t> idx(p.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor > 0 && idx.size() > max_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_tensor);
    }
    for (auto i : idx) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = loss().item();
      p[i] = orig - h;
      const double down = loss().item();
      p[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double err = std::abs(analytic[t][i] - numeric) / std::max(1.0, std::abs(numeric));
      report.max_error = std::max(report.max_error, err);
      ++report.checked;
    }
  }
  return report;
}

inline Tensord random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                             bool requires_grad = true) {
  Tensord t(std::move(shape), 0.0, requires_grad);
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

}  // namespace dc::testing
