#include "deepconsensus/nn/layers.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "deepconsensus/autodiff/gemm.h"
#include "deepconsensus/autodiff/ops.h"
#include "deepconsensus/autodiff/tape.h"

namespace dc::nn {

namespace {

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t positions() const { return out_h * out_w; }
};

// Floats per unfolded chunk.
constexpr std::size_t kUnfoldBudget = std::size_t{1} << 16;

// Output columns [lo, hi) whose tap kj lands inside the row (stride 1).
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kj) {
  const std::size_t lo = kj < g.pad ? g.pad - kj : 0;
  const std::size_t hi = std::min(g.out_w, g.width + g.pad - kj);
  return {std::min(lo, hi), hi};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols, std::size_t ld) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ld;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width;
          if (g.stride == 1) {
            const auto [lo, hi] = valid_columns(g, kj);
            std::fill(dst, dst + lo, T(0));
            std::copy(src + (lo + kj - g.pad), src + (hi + kj - g.pad), dst + lo);
            std::fill(dst + hi, dst + g.out_w, T(0));
            continue;
          }
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx, std::size_t ld) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = dx + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ld;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const T* src = row + oy * g.out_w;
          if (g.stride == 1) {
            const auto [lo, hi] = valid_columns(g, kj);
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox + kj - g.pad] += src[ox];
            continue;
          }
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t N = x.dim(0), F = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(x.dim(1)));
  }
  if (weight.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " +
                     shape_str(weight.shape()));
  }
  if (bias.numel() != F) throw ShapeError("conv2d: bias must have " + std::to_string(F) + " entries");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");

  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), k, stride, (k - 1) / 2, 0, 0};
  g.out_h = (g.height + 2 * g.pad - k) / stride + 1;
  g.out_w = (g.width + 2 * g.pad - k) / stride + 1;
  const std::size_t K = g.patch(), P = g.positions();
  const std::size_t in_stride = g.channels * g.height * g.width;

  Tensor<T> out({N, F, g.out_h, g.out_w});
  // Samples are unfolded side by side, a chunk at a time, so each GEMM is wide.
  const std::size_t chunk = std::clamp<std::size_t>(kUnfoldBudget / (K * P), 1, N);
  std::vector<T> cols(K * chunk * P), tmp(F * chunk * P);
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  const T* bd = bias.data().data();
  T* od = out.data().data();
  for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
    const std::size_t nb = std::min(chunk, N - n0), ld = nb * P;
    for (std::size_t j = 0; j < nb; ++j) im2col(xd + (n0 + j) * in_stride, g, cols.data() + j * P, ld);
    linalg::gemm<T>(false, false, F, ld, K, T(1), wd, K, cols.data(), ld, T(0), tmp.data(), ld);
    for (std::size_t j = 0; j < nb; ++j)
      for (std::size_t f = 0; f < F; ++f) {
        const T* src = tmp.data() + f * ld + j * P;
        T* dst = od + ((n0 + j) * F + f) * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bd[f];
      }
  }

  if (detail::needs_grad({&x, &weight, &bias})) {
    auto xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl();
    detail::record_op(out, {&x, &weight, &bias}, [xi, wi, bi, oi, g, N, F, K, P, in_stride, chunk] {
      const T* gd = oi->grad.data();
      T* gw = wi->requires_grad ? wi->grad_buffer() : nullptr;
      T* gb = bi->requires_grad ? bi->grad_buffer() : nullptr;
      T* gx = xi->requires_grad ? xi->grad_buffer() : nullptr;
      std::vector<T> gy(F * chunk * P);
      std::vector<T> cols(gw ? K * chunk * P : 0);
      std::vector<T> dcols(gx ? K * chunk * P : 0);
      for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
        const std::size_t nb = std::min(chunk, N - n0), ld = nb * P;
        for (std::size_t j = 0; j < nb; ++j)
          for (std::size_t f = 0; f < F; ++f) {
            const T* src = gd + ((n0 + j) * F + f) * P;
            std::copy(src, src + P, gy.data() + f * ld + j * P);
          }
        if (gb) {
          for (std::size_t f = 0; f < F; ++f) {
            const T* row = gy.data() + f * ld;
            T acc = T(0);
            for (std::size_t p = 0; p < ld; ++p) acc += row[p];
            gb[f] += acc;
          }
        }
        if (gw) {
          for (std::size_t j = 0; j < nb; ++j)
            im2col(xi->data.data() + (n0 + j) * in_stride, g, cols.data() + j * P, ld);
          // dW += dY . cols^T
          linalg::gemm<T>(false, true, F, K, ld, T(1), gy.data(), ld, cols.data(), ld, T(1), gw, K);
        }
        if (gx) {
          linalg::gemm<T>(true, false, K, ld, F, T(1), wi->data.data(), K, gy.data(), ld, T(0), dcols.data(), ld);
          for (std::size_t j = 0; j < nb; ++j) col2im_add(dcols.data() + j * P, g, gx + (n0 + j) * in_stride, ld);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t factor) {
  require_rank(x.shape(), 4, "maxpool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (factor == 0 || H % factor != 0 || W % factor != 0) {
    throw ShapeError("maxpool2d: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                     " is not divisible by factor " + std::to_string(factor));
  }
  const std::size_t Ho = H / factor, Wo = W / factor;
  Tensor<T> out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const T* xd = x.data().data();
  T* od = out.data().data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    const std::size_t base = plane * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
        std::size_t best = base + (oy * factor) * W + ox * factor;
        for (std::size_t dy = 0; dy < factor; ++dy) {
          const std::size_t row = base + (oy * factor + dy) * W + ox * factor;
          for (std::size_t dx = 0; dx < factor; ++dx) {
            if (xd[row + dx] > xd[best]) best = row + dx;
          }
        }
        od[o] = xd[best];
        (*argmax)[o] = best;
      }
    }
  }
  if (detail::needs_grad({&x})) {
    auto xi = x.impl(), oi = out.impl();
    detail::record_op(out, {&x}, [xi, oi, argmax] {
      const T* g = oi->grad.data();
      T* gx = xi->grad_buffer();
      for (std::size_t i = 0; i < argmax->size(); ++i) gx[(*argmax)[i]] += g[i];
    });
  }
  return out;
}

template <typename T>
BatchNormState<T>::BatchNormState(std::size_t channels)
    : gamma(Shape{channels}, T(1), true),
      beta(Shape{channels}, T(0), true),
      running_mean(Shape{channels}, T(0)),
      running_var(Shape{channels}, T(1)) {}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state) {
  if (x.rank() != 4 && x.rank() != 2) {
    throw ShapeError("batchnorm: expected [N,C,H,W] or [N,C], got " + shape_str(x.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1);
  const std::size_t HW = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (C != state.channels()) {
    throw ShapeError("batchnorm: state has " + std::to_string(state.channels()) +
                     " channels, input has " + std::to_string(C));
  }
  const std::size_t M = N * HW;
  if (state.training && M < 2) {
    throw ShapeError("batchnorm: training mode needs at least two values per channel");
  }

  const T* xd = x.data().data();
  Tensor<T> out(x.shape());
  T* od = out.data().data();
  auto mean = std::make_shared<std::vector<T>>(C);
  auto invstd = std::make_shared<std::vector<T>>(C);
  const T eps = static_cast<T>(state.eps);

  if (state.training) {
    const T mom = static_cast<T>(state.momentum);
    for (std::size_t c = 0; c < C; ++c) {
      // Two-pass mean/variance in double for stability in 32-bit mode.
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(M);
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(M);
      (*mean)[c] = static_cast<T>(mu);
      (*invstd)[c] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      auto rm = state.running_mean.data();
      auto rv = state.running_var.data();
      rm[c] = (T(1) - mom) * rm[c] + mom * static_cast<T>(mu);
      rv[c] = (T(1) - mom) * rv[c] +
              mom * static_cast<T>(var * static_cast<double>(M) / static_cast<double>(M - 1));
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      (*mean)[c] = state.running_mean[c];
      (*invstd)[c] = T(1) / std::sqrt(state.running_var[c] + eps);
    }
  }

  const T* gamma = state.gamma.data().data();
  const T* beta = state.beta.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = xd + (n * C + c) * HW;
      T* q = od + (n * C + c) * HW;
      const T mu = (*mean)[c], is = (*invstd)[c], ga = gamma[c], be = beta[c];
      for (std::size_t i = 0; i < HW; ++i) q[i] = (p[i] - mu) * is * ga + be;
    }
  }

  if (detail::needs_grad({&x, &state.gamma, &state.beta})) {
    auto xi = x.impl(), gi = state.gamma.impl(), bi = state.beta.impl(), oi = out.impl();
    const bool training = state.training;
    detail::record_op(out, {&x, &state.gamma, &state.beta},
                      [xi, gi, bi, oi, mean, invstd, training, N, C, HW, M] {
      const T* gd = oi->grad.data();
      const T* xd = xi->data.data();
      T* ggamma = gi->requires_grad ? gi->grad_buffer() : nullptr;
      T* gbeta = bi->requires_grad ? bi->grad_buffer() : nullptr;
      T* gx = xi->requires_grad ? xi->grad_buffer() : nullptr;
      for (std::size_t c = 0; c < C; ++c) {
        const T mu = (*mean)[c], is = (*invstd)[c], ga = gi->data[c];
        T sum_g = T(0), sum_gx = T(0);
        for (std::size_t n = 0; n < N; ++n) {
          const T* g = gd + (n * C + c) * HW;
          const T* p = xd + (n * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) {
            sum_g += g[i];
            sum_gx += g[i] * (p[i] - mu) * is;
          }
        }
        if (gbeta) gbeta[c] += sum_g;
        if (ggamma) ggamma[c] += sum_gx;
        if (!gx) continue;
        const T m = static_cast<T>(M);
        for (std::size_t n = 0; n < N; ++n) {
          const T* g = gd + (n * C + c) * HW;
          const T* p = xd + (n * C + c) * HW;
          T* q = gx + (n * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) {
            if (training) {
              const T xhat = (p[i] - mu) * is;
              q[i] += ga * is / m * (m * g[i] - sum_g - xhat * sum_gx);
            } else {
              q[i] += g[i] * ga * is;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) o[i] = v[i] > T(0) ? v[i] : alpha * v[i];
  if (detail::needs_grad({&x})) {
    auto xi = x.impl(), oi = out.impl();
    detail::record_op(out, {&x}, [xi, oi, alpha] {
      const T* g = oi->grad.data();
      const T* v = xi->data.data();
      T* gx = xi->grad_buffer();
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += v[i] > T(0) ? g[i] : alpha * g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t N = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: weight " + shape_str(weight.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  if (bias.numel() != out_f) throw ShapeError("linear: bias size mismatch");
  Tensor<T> out({N, out_f});
  T* od = out.data().data();
  linalg::gemm<T>(false, true, N, out_f, in, T(1), x.data().data(), in, weight.data().data(), in,
                  T(0), od, out_f);
  const T* bd = bias.data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < out_f; ++j) od[n * out_f + j] += bd[j];
  if (detail::needs_grad({&x, &weight, &bias})) {
    auto xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl();
    detail::record_op(out, {&x, &weight, &bias}, [xi, wi, bi, oi, N, in, out_f] {
      const T* g = oi->grad.data();
      if (xi->requires_grad) {
        linalg::gemm<T>(false, false, N, in, out_f, T(1), g, out_f, wi->data.data(), in, T(1),
                        xi->grad_buffer(), in);
      }
      if (wi->requires_grad) {
        linalg::gemm<T>(true, false, out_f, in, N, T(1), g, out_f, xi->data.data(), in, T(1),
                        wi->grad_buffer(), in);
      }
      if (bi->requires_grad) {
        T* gb = bi->grad_buffer();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t j = 0; j < out_f; ++j) gb[j] += g[n * out_f + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (targets.size() != N) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for a batch of " + std::to_string(N));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= K) {
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(t) +
                              " outside [0, " + std::to_string(K) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<T>>(N * K);
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  const T* z = logits.data().data();
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = z + n * K;
    const T mx = *std::max_element(row, row + K);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k] - mx));
    const double log_denom = std::log(denom);
    for (std::size_t k = 0; k < K; ++k) {
      (*probs)[n * K + k] = static_cast<T>(std::exp(static_cast<double>(row[k] - mx) - log_denom));
    }
    loss += log_denom - static_cast<double>(row[(*tgt)[n]] - mx);
  }
  Tensor<T> out(Shape{1}, static_cast<T>(loss / static_cast<double>(N)));
  if (detail::needs_grad({&logits})) {
    auto li = logits.impl(), oi = out.impl();
    detail::record_op(out, {&logits}, [li, oi, probs, tgt, N, K] {
      const T g = oi->grad[0] / static_cast<T>(N);
      T* gl = li->grad_buffer();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
          const T onehot = static_cast<std::size_t>((*tgt)[n]) == k ? T(1) : T(0);
          gl[n * K + k] += g * ((*probs)[n * K + k] - onehot);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("flatten: empty shape");
  const std::size_t N = x.dim(0);
  return reshape(x, Shape{N, N ? x.numel() / N : 0});
}

template <typename T>
Tensor<T> spatial_sum(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "spatial_sum");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out({N, C});
  const T* xd = x.data().data();
  T* od = out.data().data();
  for (std::size_t i = 0; i < N * C; ++i) {
    T acc = T(0);
    const T* p = xd + i * HW;
    for (std::size_t j = 0; j < HW; ++j) acc += p[j];
    od[i] = acc;
  }
  if (detail::needs_grad({&x})) {
    auto xi = x.impl(), oi = out.impl();
    detail::record_op(out, {&x}, [xi, oi, N, C, HW] {
      const T* g = oi->grad.data();
      T* gx = xi->grad_buffer();
      for (std::size_t i = 0; i < N * C; ++i) {
        T* p = gx + i * HW;
        for (std::size_t j = 0; j < HW; ++j) p[j] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_columns(const Tensor<T>& x, std::size_t count) {
  require_rank(x.shape(), 2, "slice_columns");
  const std::size_t N = x.dim(0), K = x.dim(1);
  if (count > K) throw ShapeError("slice_columns: count exceeds column count");
  Tensor<T> out({N, count});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < count; ++k) out[n * count + k] = x[n * K + k];
  if (detail::needs_grad({&x})) {
    auto xi = x.impl(), oi = out.impl();
    detail::record_op(out, {&x}, [xi, oi, N, K, count] {
      const T* g = oi->grad.data();
      T* gx = xi->grad_buffer();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < count; ++k) gx[n * K + k] += g[n * count + k];
    });
  }
  return out;
}

#define DC_INSTANTIATE_LAYERS(T)                                                            \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                               std::size_t);                                                \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&, std::size_t);                           \
  template struct BatchNormState<T>;                                                        \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, BatchNormState<T>&);                    \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                    \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);      \
  template Tensor<T> flatten<T>(const Tensor<T>&);                                          \
  template Tensor<T> spatial_sum<T>(const Tensor<T>&);                                      \
  template Tensor<T> slice_columns<T>(const Tensor<T>&, std::size_t);

DC_INSTANTIATE_LAYERS(float)
DC_INSTANTIATE_LAYERS(double)

}  // namespace dc::nn
