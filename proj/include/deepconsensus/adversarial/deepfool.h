#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deepconsensus/data/idx.h"
#include "deepconsensus/nn/model.h"

namespace dc::adversarial {

/// Anything DeepFool can attack: logits must be differentiable w.r.t. x.
class Classifier {
 public:
  virtual ~Classifier() = default;
  /// Classes the attack may move between; logits beyond this are ignored.
  virtual std::size_t num_classes() const = 0;
  /// x: [B, C, H, W] -> [B, >= num_classes()]
  virtual Tensorf logits(const Tensorf& x) = 0;
};

/// Wraps a model in eval mode with frozen parameters for the lifetime of the
/// wrapper. Only the c real-class logits are attacked.
class ModelClassifier : public Classifier {
 public:
  explicit ModelClassifier(nn::Model<float>& model);
  ~ModelClassifier() override;
  ModelClassifier(const ModelClassifier&) = delete;
  ModelClassifier& operator=(const ModelClassifier&) = delete;

  std::size_t num_classes() const override { return model_.num_classes(); }
  Tensorf logits(const Tensorf& x) override;

 private:
  nn::Model<float>& model_;
  bool was_training_;
};

/// f(x) = W flatten(x) + b, the closed-form test target.
class AffineClassifier : public Classifier {
 public:
  AffineClassifier(Tensorf weight, Tensorf bias);
  std::size_t num_classes() const override { return weight_.dim(0); }
  Tensorf logits(const Tensorf& x) override;

 private:
  Tensorf weight_;
  Tensorf bias_;
};

/// Added to every step length.
inline constexpr double kStepPad = 1e-4;

struct DeepFoolOptions {
  std::size_t max_iter = 50;
  double overshoot = 0.02;
  /// Clip the perturbed image to [0, 1] after every step.
  bool clip = false;
};

struct AttackResult {
  Tensorf original;      // [1, C, H, W]
  Tensorf perturbed;     // [1, C, H, W]
  Tensorf perturbation;  // perturbed - original
  std::size_t iterations = 0;
  int original_class = -1;
  int adversarial_class = -1;
  bool success = false;
};

/// Multiclass DeepFool from a single normalised image [1, C, H, W].
/// A classifier whose gradients all vanish yields a failed attack with no steps.
AttackResult deepfool(Classifier& f, const Tensorf& x, const DeepFoolOptions& options = {});

double l2_norm(const Tensorf& t);

struct DensityResult {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::size_t attempted = 0;
  std::size_t successes = 0;
  std::size_t failures = 0;
  std::size_t skipped = 0;  // zero-norm inputs
  std::vector<double> ratios;
  std::vector<std::size_t> indices;
  std::vector<AttackResult> attacks;
};

/// rho = mean over successful attacks of |r| / |x|, for n_samples test images
/// drawn without replacement using `seed`. Images are normalised to [0, 1].
DensityResult perturbation_density(Classifier& f, const data::ImageSet& testset, std::size_t n_samples,
                                   std::uint64_t seed, const DeepFoolOptions& options = {},
                                   bool keep_attacks = false);

/// Same statistic from precomputed attacks.
DensityResult density_from(const std::vector<AttackResult>& attacks);

/// Writes rows of (original | perturbed | scaled |perturbation|) single-channel
/// images as a binary PGM.
void write_pgm_grid(const std::filesystem::path& path, const std::vector<AttackResult>& attacks);

}  // namespace dc::adversarial
