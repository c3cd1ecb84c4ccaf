#include "deepconsensus/adversarial/deepfool.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

#include "deepconsensus/autodiff/ops.h"
#include "deepconsensus/autodiff/tape.h"
#include "deepconsensus/data/batches.h"
#include "deepconsensus/nn/layers.h"

namespace dc::adversarial {

ModelClassifier::ModelClassifier(nn::Model<float>& model) : model_(model), was_training_(model.training()) {
  model_.set_training(false);
  model_.set_requires_grad(false);
}

ModelClassifier::~ModelClassifier() {
  model_.set_requires_grad(true);
  model_.set_training(was_training_);
}

Tensorf ModelClassifier::logits(const Tensorf& x) { return model_.forward(x).logits; }

AffineClassifier::AffineClassifier(Tensorf weight, Tensorf bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2 || bias_.rank() != 1 || bias_.dim(0) != weight_.dim(0))
    throw ShapeError("affine classifier: weight [K, D] and bias [K] required");
}

Tensorf AffineClassifier::logits(const Tensorf& x) { return nn::linear(nn::flatten(x), weight_, bias_); }

double l2_norm(const Tensorf& t) {
  double s = 0;
  for (float v : t.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

namespace {

struct Evaluation {
  std::vector<double> values;               // c logits
  std::vector<std::vector<double>> grads;   // c gradients, each numel(x)
};

// One batched pass: row k of the replicated input receives the gradient of logit k.
Evaluation evaluate_with_gradients(Classifier& f, const Tensorf& x) {
  const std::size_t c = f.num_classes();
  const std::size_t d = x.numel();
  Shape shape = x.shape();
  shape[0] = c;
  std::vector<float> rep(c * d);
  for (std::size_t k = 0; k < c; ++k) std::copy(x.data().begin(), x.data().end(), rep.begin() + k * d);
  Tensorf input(shape, std::move(rep), true);

  auto logits = f.logits(input);
  if (logits.rank() != 2 || logits.dim(0) != c || logits.dim(1) < c)
    throw ShapeError("deepfool: classifier returned " + shape_str(logits.shape()));
  const std::size_t width = logits.dim(1);
  Tensorf mask({c, width});
  for (std::size_t k = 0; k < c; ++k) mask[k * width + k] = 1.0f;

  Evaluation e;
  e.values.resize(c);
  for (std::size_t k = 0; k < c; ++k) e.values[k] = logits[k * width + k];
  backward(sum(mul(logits, mask)));
  if (!input.has_grad()) throw GradError("deepfool: classifier output does not depend on the input");
  auto g = input.grad();
  e.grads.assign(c, std::vector<double>(d));
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < d; ++i) e.grads[k][i] = g[k * d + i];
  input.zero_grad();
  return e;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

AttackResult deepfool(Classifier& f, const Tensorf& x, const DeepFoolOptions& options) {
  if (x.rank() != 4 || x.dim(0) != 1) throw ShapeError("deepfool: expected [1, C, H, W], got " + shape_str(x.shape()));
  const std::size_t c = f.num_classes();
  if (c < 2) throw std::invalid_argument("deepfool: need at least two classes");
  const std::size_t d = x.numel();

  AttackResult r;
  r.original = Tensorf(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
  std::vector<double> r_tot(d, 0.0);
  std::vector<float> current(x.data().begin(), x.data().end());

  auto e = evaluate_with_gradients(f, r.original);
  r.original_class = argmax(e.values);
  const auto k0 = static_cast<std::size_t>(r.original_class);
  int label = r.original_class;

  while (label == r.original_class && r.iterations < options.max_iter) {
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> w_best;
    for (std::size_t k = 0; k < c; ++k) {
      if (k == k0) continue;
      std::vector<double> w(d);
      double norm2 = 0;
      for (std::size_t i = 0; i < d; ++i) {
        w[i] = e.grads[k][i] - e.grads[k0][i];
        norm2 += w[i] * w[i];
      }
      const double norm = std::sqrt(norm2);
      if (norm == 0) continue;
      const double pert = std::abs(e.values[k] - e.values[k0]) / norm;
      if (pert < best) {
        best = pert;
        for (auto& v : w) v /= norm;
        w_best = std::move(w);
      }
    }
    if (w_best.empty()) break;  // flat in every direction
    for (std::size_t i = 0; i < d; ++i) r_tot[i] += (best + kStepPad) * w_best[i];
    for (std::size_t i = 0; i < d; ++i) {
      float v = static_cast<float>(x[i] + (1.0 + options.overshoot) * r_tot[i]);
      if (options.clip) v = std::clamp(v, 0.0f, 1.0f);
      current[i] = v;
    }
    ++r.iterations;
    e = evaluate_with_gradients(f, Tensorf(x.shape(), current));
    label = argmax(e.values);
  }

  r.perturbed = Tensorf(x.shape(), current);
  std::vector<float> delta(d);
  for (std::size_t i = 0; i < d; ++i) delta[i] = current[i] - x[i];
  r.perturbation = Tensorf(x.shape(), std::move(delta));
  r.adversarial_class = label;
  r.success = label != r.original_class;
  return r;
}

DensityResult density_from(const std::vector<AttackResult>& attacks) {
  DensityResult out;
  for (const auto& a : attacks) {
    ++out.attempted;
    const double xn = l2_norm(a.original);
    if (xn == 0) {
      ++out.skipped;
      continue;
    }
    if (!a.success) {
      ++out.failures;
      continue;
    }
    ++out.successes;
    out.ratios.push_back(l2_norm(a.perturbation) / xn);
  }
  const auto n = static_cast<double>(out.ratios.size());
  if (n > 0) out.mean = std::accumulate(out.ratios.begin(), out.ratios.end(), 0.0) / n;
  if (n > 1) {
    double ss = 0;
    for (double v : out.ratios) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / (n - 1));
  }
  return out;
}

DensityResult perturbation_density(Classifier& f, const data::ImageSet& testset, std::size_t n_samples,
                                   std::uint64_t seed, const DeepFoolOptions& options, bool keep_attacks) {
  std::vector<std::size_t> order(testset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(n_samples, order.size()));

  std::vector<AttackResult> attacks;
  attacks.reserve(order.size());
  for (auto idx : order) {
    auto batch = data::make_batch(testset, std::vector<std::size_t>{idx});
    if (l2_norm(batch.x) == 0) {
      std::cerr << "warning: test image " << idx << " has zero norm; skipped\n";
      AttackResult skipped;
      skipped.original = batch.x;
      skipped.perturbation = Tensorf(batch.x.shape());
      skipped.perturbed = batch.x;
      attacks.push_back(std::move(skipped));
      continue;
    }
    attacks.push_back(deepfool(f, batch.x, options));
  }
  auto out = density_from(attacks);
  out.indices = std::move(order);
  if (keep_attacks) out.attacks = std::move(attacks);
  return out;
}

void write_pgm_grid(const std::filesystem::path& path, const std::vector<AttackResult>& attacks) {
  if (attacks.empty()) throw std::invalid_argument("pgm grid: no attacks");
  const auto& s = attacks.front().original.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("pgm grid: single-channel images required");
  const std::size_t h = s[2], w = s[3], gap = 2;
  const std::size_t width = 3 * w + 2 * gap, height = attacks.size() * h + (attacks.size() - 1) * gap;
  std::vector<unsigned char> pixels(width * height, 128);
  auto to_byte = [](double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    const auto& at = attacks[a];
    if (at.original.shape() != s) throw ShapeError("pgm grid: mixed image shapes");
    double peak = 0;
    for (float v : at.perturbation.data()) peak = std::max(peak, static_cast<double>(std::abs(v)));
    const std::size_t top = a * (h + gap);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        unsigned char* row = &pixels[(top + y) * width];
        row[x] = to_byte(at.original[i]);
        row[w + gap + x] = to_byte(at.perturbed[i]);
        row[2 * (w + gap) + x] = to_byte(peak > 0 ? std::abs(at.perturbation[i]) / peak : 0.0);
      }
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "P5\n" << width << ' ' << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

}  // namespace dc::adversarial
