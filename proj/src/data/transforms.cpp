#include "deepconsensus/data/transforms.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dc::data {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ImageSet embed_canvas(const ImageSet& set, std::size_t size) {
  const std::size_t H = set.height(), W = set.width(), C = set.channels();
  if (H > size || W > size) {
    throw std::invalid_argument("embed_canvas: " + std::to_string(H) + "x" + std::to_string(W) +
                                " image does not fit a " + std::to_string(size) + " canvas");
  }
  if (H == size && W == size) return set;
  const std::size_t oy = (size - H) / 2, ox = (size - W) / 2;
  ImageSet out;
  out.name = set.name;
  out.num_classes = set.num_classes;
  out.labels = set.labels;
  out.images = Tensorf({set.size(), C, size, size});
  auto dst = out.images.data();
  const auto src = set.images.data();
  for (std::size_t p = 0; p < set.size() * C; ++p)
    for (std::size_t y = 0; y < H; ++y)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((p * H + y) * W), W,
                  dst.begin() + static_cast<std::ptrdiff_t>((p * size + oy + y) * size + ox));
  return out;
}

void shift(ImageView img, long dx, long dy) {
  const long H = static_cast<long>(img.height), W = static_cast<long>(img.width);
  std::vector<float> plane(img.height * img.width);
  for (std::size_t c = 0; c < img.channels; ++c) {
    float* p = img.pixels.data() + c * img.height * img.width;
    std::fill(plane.begin(), plane.end(), 0.0f);
    for (long y = 0; y < H; ++y) {
      const long ty = y + dy;
      if (ty < 0 || ty >= H) continue;
      for (long x = 0; x < W; ++x) {
        const long tx = x + dx;
        if (tx < 0 || tx >= W) continue;
        plane[ty * W + tx] = p[y * W + x];
      }
    }
    std::copy(plane.begin(), plane.end(), p);
  }
}

void translate(ImageView img, std::size_t t, std::uint64_t seed) {
  if (t == 0) return;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  const long sx = coin(rng) ? 1 : -1;
  const long sy = coin(rng) ? 1 : -1;
  shift(img, sx * static_cast<long>(t), sy * static_cast<long>(t));
}

void magnify(ImageView img, double scale) {
  if (scale < 1.0) throw std::invalid_argument("magnify: scale must be at least 1");
  if (scale == 1.0) return;
  const std::size_t H = img.height, W = img.width;
  const double cy = static_cast<double>(H / 2), cx = static_cast<double>(W / 2);
  std::vector<long> sy(H), sx(W);
  for (std::size_t d = 0; d < H; ++d) sy[d] = static_cast<long>(std::floor((d - cy) / scale + cy));
  for (std::size_t d = 0; d < W; ++d) sx[d] = static_cast<long>(std::floor((d - cx) / scale + cx));
  std::vector<float> plane(H * W);
  for (std::size_t c = 0; c < img.channels; ++c) {
    float* p = img.pixels.data() + c * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) plane[y * W + x] = p[sy[y] * static_cast<long>(W) + sx[x]];
    std::copy(plane.begin(), plane.end(), p);
  }
}

void add_gaussian_noise(ImageView img, double stddev, std::uint64_t seed) {
  if (stddev < 0) throw std::invalid_argument("noise std must be non-negative");
  if (stddev == 0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& v : img.pixels) v = static_cast<float>(std::clamp(v + n(rng), 0.0, 255.0));
}

std::vector<double> gaussian_kernel(double stddev) {
  const long r = static_cast<long>(std::ceil(3.0 * stddev));
  std::vector<double> k(2 * r + 1);
  double total = 0;
  for (long i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-double(i * i) / (2.0 * stddev * stddev));
    total += k[i + r];
  }
  for (auto& v : k) v /= total;
  return k;
}

void gaussian_blur(ImageView img, double stddev) {
  if (stddev < 0) throw std::invalid_argument("blur std must be non-negative");
  if (stddev == 0) return;
  const auto k = gaussian_kernel(stddev);
  const long r = static_cast<long>(k.size() / 2);
  const long H = static_cast<long>(img.height), W = static_cast<long>(img.width);
  std::vector<double> tmp(H * W);
  for (std::size_t c = 0; c < img.channels; ++c) {
    float* p = img.pixels.data() + c * img.height * img.width;
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i) {
          const long q = x + i;
          if (q >= 0 && q < W) s += k[i + r] * p[y * W + q];
        }
        tmp[y * W + x] = s;
      }
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i) {
          const long q = y + i;
          if (q >= 0 && q < H) s += k[i + r] * tmp[q * W + x];
        }
        p[y * W + x] = static_cast<float>(s);
      }
  }
}

std::string to_string(PerturbKind k) {
  switch (k) {
    case PerturbKind::none: return "none";
    case PerturbKind::translate: return "translate";
    case PerturbKind::magnify: return "magnify";
    case PerturbKind::noise: return "noise";
    case PerturbKind::blur: return "blur";
  }
  return "?";
}

PerturbKind perturb_kind_from_string(const std::string& name) {
  for (auto k : {PerturbKind::none, PerturbKind::translate, PerturbKind::magnify, PerturbKind::noise,
                 PerturbKind::blur})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown perturbation '" + name + "'");
}

void PerturbationSpec::validate() const {
  if (!(magnitude >= 0.0)) throw std::invalid_argument("perturbation magnitude must be non-negative");
  if (kind == PerturbKind::magnify && magnitude < 1.0) {
    throw std::invalid_argument("magnification scale must be at least 1");
  }
  if (kind == PerturbKind::translate && magnitude != std::floor(magnitude)) {
    throw std::invalid_argument("translation must be a whole number of pixels");
  }
}

bool PerturbationSpec::is_identity() const {
  switch (kind) {
    case PerturbKind::none: return true;
    case PerturbKind::magnify: return magnitude == 1.0;
    default: return magnitude == 0.0;
  }
}

ImageSet apply(const ImageSet& set, const PerturbationSpec& spec) {
  spec.validate();
  ImageSet out = set;
  out.images = set.images.clone();
  if (spec.is_identity()) return out;
  const std::size_t per = set.image_numel();
  for (std::size_t i = 0; i < set.size(); ++i) {
    ImageView v{out.images.data().subspan(i * per, per), set.channels(), set.height(), set.width()};
    const std::uint64_t s = mix_seed(spec.seed, i);
    switch (spec.kind) {
      case PerturbKind::translate: translate(v, static_cast<std::size_t>(spec.magnitude), s); break;
      case PerturbKind::magnify: magnify(v, spec.magnitude); break;
      case PerturbKind::noise: add_gaussian_noise(v, spec.magnitude, s); break;
      case PerturbKind::blur: gaussian_blur(v, spec.magnitude); break;
      case PerturbKind::none: break;
    }
  }
  return out;
}

std::vector<double> default_grid(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::none: return {0.0};
    case PerturbKind::translate: return {0, 4, 8, 12, 16, 20};
    case PerturbKind::magnify: return {1.0, 1.25, 1.5, 1.75, 2.0};
    case PerturbKind::noise: return {0, 10, 20, 30};
    case PerturbKind::blur: return {0, 0.4, 0.8, 1.2, 1.6};
  }
  return {};
}

double endpoint(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::translate: return 20.0;
    case PerturbKind::magnify: return 2.0;
    case PerturbKind::noise: return 30.0;
    case PerturbKind::blur: return 1.5;
    case PerturbKind::none: return 0.0;
  }
  return 0.0;
}

ImageSet make_quadrants(const ImageSet& digits, std::uint64_t seed) {
  constexpr std::size_t canvas = 64, quadrant = 32;
  const std::size_t H = digits.height(), W = digits.width(), C = digits.channels();
  if (H > quadrant || W > quadrant) throw std::invalid_argument("make_quadrants: digits exceed a quadrant");
  const std::size_t oy = (quadrant - H) / 2, ox = (quadrant - W) / 2;
  ImageSet out;
  out.name = digits.name + "-quadrants";
  out.num_classes = digits.num_classes * 4;
  out.images = Tensorf({digits.size(), C, canvas, canvas});
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 3);
  auto dst = out.images.data();
  const auto src = digits.images.data();
  for (std::size_t n = 0; n < digits.size(); ++n) {
    const int q = pick(rng);
    const std::size_t top = (q / 2) * quadrant + oy, left = (q % 2) * quadrant + ox;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(((n * C + c) * H + y) * W), W,
                    dst.begin() + static_cast<std::ptrdiff_t>(((n * C + c) * canvas + top + y) * canvas + left));
    out.labels.push_back(digits.labels[n] * 4 + q);
  }
  return out;
}

}  // namespace dc::data
