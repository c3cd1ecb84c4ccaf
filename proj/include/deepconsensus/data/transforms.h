#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deepconsensus/data/idx.h"

namespace dc::data {

/// Centres every image on a black size x size canvas at offset floor((size-H)/2).
ImageSet embed_canvas(const ImageSet& set, std::size_t size = 64);

/// One image, channels first, intensities 0-255.
struct ImageView {
  std::span<float> pixels;
  std::size_t channels;
  std::size_t height;
  std::size_t width;
};

/// Shift by (dx, dy) pixels; vacated pixels are zero, content leaving the canvas is lost.
void shift(ImageView img, long dx, long dy);
/// Shift by (+-t, +-t), signs drawn from `seed`.
void translate(ImageView img, std::size_t t, std::uint64_t seed);
/// Nearest-neighbour zoom about the centre c = size/2: dst takes src floor((dst-c)/s + c).
void magnify(ImageView img, double scale);
/// Adds N(0, std) per pixel and clamps to [0, 255].
void add_gaussian_noise(ImageView img, double stddev, std::uint64_t seed);
/// Separable Gaussian, radius ceil(3 std), normalised, zero padding.
void gaussian_blur(ImageView img, double stddev);
/// Normalised 1-D blur kernel of length 2*ceil(3 std)+1.
std::vector<double> gaussian_kernel(double stddev);

enum class PerturbKind { none, translate, magnify, noise, blur };

std::string to_string(PerturbKind k);
PerturbKind perturb_kind_from_string(const std::string& name);

struct PerturbationSpec {
  PerturbKind kind = PerturbKind::none;
  /// Pixels, scale factor, intensity std or blur std depending on kind.
  double magnitude = 0.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument for negative magnitudes or zoom below 1.
  void validate() const;
  bool is_identity() const;
  bool operator==(const PerturbationSpec&) const = default;
};

/// Applies `spec` to every image. Stochastic kinds derive an independent
/// stream per image index from spec.seed.
ImageSet apply(const ImageSet& set, const PerturbationSpec& spec);

/// Default magnitude grid for one kind.
std::vector<double> default_grid(PerturbKind kind);
/// Endpoint magnitude of each kind: 20 px, 2x, std 30, blur 1.5.
double endpoint(PerturbKind kind);

/// 40-class task: each 28x28 digit is placed centred in a uniformly chosen
/// 32x32 quadrant of a 64x64 canvas; label = digit*4 + quadrant with
/// TL=0, TR=1, BL=2, BR=3.
ImageSet make_quadrants(const ImageSet& digits, std::uint64_t seed);

/// 64-bit mix of a seed and a stream index.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace dc::data
