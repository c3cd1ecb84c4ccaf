#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>

#include "deepconsensus/data/batches.h"
#include "deepconsensus/data/idx.h"
#include "deepconsensus/data/transforms.h"

using namespace dc;
using namespace dc::data;

namespace {

std::filesystem::path tmp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dc_data_" + name);
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Two 2x2 images, authored byte by byte.
const std::vector<std::uint8_t> kImages = {0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                           0, 255, 17, 128, 1, 2, 3, 254};
const std::vector<std::uint8_t> kLabels = {0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 3};

ImageSet blank(std::size_t n, std::size_t size, float fill = 0.0f) {
  ImageSet s;
  s.images = Tensorf({n, 1, size, size}, fill);
  s.labels.assign(n, 0);
  s.num_classes = 10;
  return s;
}

ImageView view(ImageSet& s, std::size_t i = 0) {
  const std::size_t per = s.image_numel();
  return {s.images.data().subspan(i * per, per), s.channels(), s.height(), s.width()};
}

ImageSet digits(std::size_t n, unsigned seed) {
  ImageSet s = blank(n, 28);
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> px(0, 255), lab(0, 9);
  for (auto& v : s.images.data()) v = static_cast<float>(px(rng));
  for (auto& l : s.labels) l = lab(rng);
  return s;
}

}  // namespace

TEST(Idx, HandBuiltFixture) {
  write_bytes(tmp("img"), kImages);
  write_bytes(tmp("lab"), kLabels);
  auto s = read_image_set(tmp("img"), tmp("lab"), "fixture");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.images.shape(), (Shape{2, 1, 2, 2}));
  const float expect[] = {0, 255, 17, 128, 1, 2, 3, 254};
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(s.images[i], expect[i]);
  EXPECT_EQ(s.labels, (std::vector<int>{7, 3}));
  EXPECT_EQ(s.num_classes, 8u);
}

TEST(Idx, TruncatedFileIsRejectedWithOffset) {
  auto bytes = kImages;
  bytes.pop_back();
  try {
    parse_idx(bytes, "fixture");
    FAIL() << "no error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 23"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_idx({0, 0, 8}), DataError);
  EXPECT_THROW(parse_idx({0, 0, 8, 3, 0, 0}), DataError);
}

TEST(Idx, BadMagicIsRejected) {
  auto bytes = kImages;
  bytes[0] = 0x1f;
  EXPECT_THROW(parse_idx(bytes), DataError);
  bytes = kImages;
  bytes[2] = 0x0d;
  EXPECT_THROW(parse_idx(bytes), DataError);
}

TEST(Idx, WriteReadRoundTrip) {
  auto s = digits(5, 1);
  write_image_set(s, tmp("rt_img"), tmp("rt_lab"));
  auto r = read_image_set(tmp("rt_img"), tmp("rt_lab"), "rt", 10);
  for (std::size_t i = 0; i < s.images.numel(); ++i) ASSERT_EQ(r.images[i], s.images[i]);
  EXPECT_EQ(r.labels, s.labels);
}

TEST(Idx, MissingDatasetExplainsWhatToDo) {
  try {
    load_mnist(tmp("nowhere"), Split::train);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("DC_DATA_DIR"), std::string::npos);
  }
}

TEST(Idx, MnistTrainingHeader) {
  const auto dir = data_root("/root/data/mnist");
  if (!std::filesystem::exists(dir / "train-images-idx3-ubyte")) GTEST_SKIP() << "MNIST not present";
  auto raw = read_idx(dir / "train-images-idx3-ubyte");
  EXPECT_EQ(raw.dims, (std::vector<std::uint32_t>{60000, 28, 28}));
  auto test = load_mnist(dir, Split::test);
  EXPECT_EQ(test.size(), 10000u);
  EXPECT_EQ(test.num_classes, 10u);
}

TEST(Canvas, DigitLandsInCentre) {
  auto s = blank(1, 28, 200.0f);
  auto c = embed_canvas(s);
  ASSERT_EQ(c.images.shape(), (Shape{1, 1, 64, 64}));
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const bool inside = y >= 18 && y <= 45 && x >= 18 && x <= 45;
      ASSERT_EQ(c.images[y * 64 + x], inside ? 200.0f : 0.0f) << y << "," << x;
    }
}

TEST(Canvas, BlackStaysBlackAndFullSizeIsUnchanged) {
  auto c = embed_canvas(blank(2, 28));
  for (float v : c.images.data()) ASSERT_EQ(v, 0.0f);
  auto full = blank(1, 64);
  full.images[100] = 9;
  auto same = embed_canvas(full);
  for (std::size_t i = 0; i < full.images.numel(); ++i) ASSERT_EQ(same.images[i], full.images[i]);
  EXPECT_THROW(embed_canvas(blank(1, 65)), std::invalid_argument);
}

TEST(Translate, ZeroIsIdentityAndHotPixelMoves) {
  auto s = blank(1, 64);
  s.images[32 * 64 + 32] = 255;
  auto before = s.images.clone();
  translate(view(s), 0, 1);
  for (std::size_t i = 0; i < before.numel(); ++i) ASSERT_EQ(s.images[i], before[i]);
  shift(view(s), 20, 20);
  EXPECT_EQ(s.images[52 * 64 + 52], 255.0f);
  float total = 0;
  for (float v : s.images.data()) total += v;
  EXPECT_EQ(total, 255.0f);
}

TEST(Translate, SignsAreSeededAndContentClips) {
  auto a = blank(1, 64);
  a.images[32 * 64 + 32] = 255;
  auto b = a;
  b.images = a.images.clone();
  translate(view(a), 20, 42);
  translate(view(b), 20, 42);
  for (std::size_t i = 0; i < a.images.numel(); ++i) ASSERT_EQ(a.images[i], b.images[i]);
  std::size_t hot = 0;
  for (std::size_t i = 0; i < a.images.numel(); ++i)
    if (a.images[i] == 255) {
      ++hot;
      const long y = static_cast<long>(i / 64), x = static_cast<long>(i % 64);
      EXPECT_EQ(std::abs(y - 32), 20);
      EXPECT_EQ(std::abs(x - 32), 20);
    }
  EXPECT_EQ(hot, 1u);
  auto edge = blank(1, 64);
  edge.images[63 * 64 + 63] = 1;
  shift(view(edge), 1, 1);
  for (float v : edge.images.data()) ASSERT_EQ(v, 0.0f);
}

TEST(Translate, SignsVaryAcrossImages) {
  auto s = blank(64, 64);
  for (std::size_t i = 0; i < 64; ++i) s.images[i * 64 * 64 + 32 * 64 + 32] = 1;
  auto t = apply(s, {PerturbKind::translate, 8, 3});
  std::set<std::pair<long, long>> seen;
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t p = 0; p < 64 * 64; ++p)
      if (t.images[i * 64 * 64 + p] == 1) seen.insert({long(p / 64) - 32, long(p % 64) - 32});
  EXPECT_EQ(seen.size(), 4u);
}

TEST(Magnify, ScaleOneIsIdentity) {
  auto s = digits(1, 2);
  auto c = embed_canvas(s);
  auto before = c.images.clone();
  magnify(view(c), 1.0);
  for (std::size_t i = 0; i < before.numel(); ++i) ASSERT_EQ(c.images[i], before[i]);
  EXPECT_THROW(magnify(view(c), 0.5), std::invalid_argument);
}

TEST(Magnify, CentredSquareDoubles) {
  auto s = blank(1, 64);
  for (std::size_t y : {31, 32})
    for (std::size_t x : {31, 32}) s.images[y * 64 + x] = 1;
  magnify(view(s), 2.0);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const bool inside = y >= 30 && y <= 33 && x >= 30 && x <= 33;
      ASSERT_EQ(s.images[y * 64 + x], inside ? 1.0f : 0.0f) << y << "," << x;
    }
}

TEST(Magnify, MatchesPerPixelIndexOracle) {
  auto c = embed_canvas(digits(1, 3));
  auto src = c.images.clone();
  for (double scale : {1.25, 1.5, 2.0}) {
    auto out = c;
    out.images = src.clone();
    magnify(view(out), scale);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const int sy = static_cast<int>(std::floor((y - 32) / scale + 32));
        const int sx = static_cast<int>(std::floor((x - 32) / scale + 32));
        ASSERT_EQ(out.images[y * 64 + x], src[sy * 64 + sx]);
      }
  }
}

TEST(Noise, ZeroIsIdentityAndStdMatches) {
  auto s = blank(1, 128, 128.0f);
  add_gaussian_noise(view(s), 0.0, 5);
  for (float v : s.images.data()) ASSERT_EQ(v, 128.0f);
  add_gaussian_noise(view(s), 30.0, 5);
  double sum = 0, sq = 0;
  for (float v : s.images.data()) {
    sum += v - 128.0;
    sq += (v - 128.0) * (v - 128.0);
  }
  const double n = s.images.numel();
  EXPECT_NEAR(std::sqrt(sq / n - (sum / n) * (sum / n)), 30.0, 2.0);
}

TEST(Noise, OutputStaysInRange) {
  auto s = digits(4, 4);
  auto out = apply(s, {PerturbKind::noise, 120.0, 9});
  for (float v : out.images.data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 255.0f);
  }
}

TEST(Blur, ZeroIsIdentityAndConstantInteriorIsKept) {
  auto s = blank(1, 32, 100.0f);
  gaussian_blur(view(s), 0.0);
  for (float v : s.images.data()) ASSERT_EQ(v, 100.0f);
  gaussian_blur(view(s), 1.5);
  for (std::size_t y = 5; y < 27; ++y)
    for (std::size_t x = 5; x < 27; ++x) ASSERT_NEAR(s.images[y * 32 + x], 100.0f, 1e-3);
  EXPECT_LT(s.images[0], 100.0f);
}

TEST(Blur, DeltaResponseIsSampledKernel) {
  auto s = blank(1, 31);
  s.images[15 * 31 + 15] = 1;
  gaussian_blur(view(s), 1.5);
  // Direct evaluation: exp(-(dx^2+dy^2)/(2 s^2)), normalised over the 11x11 support.
  double total = 0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) total += std::exp(-(dx * dx + dy * dy) / (2 * 2.25));
  for (int y = 0; y < 31; ++y)
    for (int x = 0; x < 31; ++x) {
      const int dy = y - 15, dx = x - 15;
      const double expect =
          (std::abs(dy) <= 5 && std::abs(dx) <= 5) ? std::exp(-(dx * dx + dy * dy) / (2 * 2.25)) / total : 0.0;
      ASSERT_NEAR(s.images[y * 31 + x], expect, 1e-7);
    }
}

TEST(Perturbation, IdentityAtZeroMagnitudeIsBitExact) {
  auto s = embed_canvas(digits(3, 5));
  for (auto spec : {PerturbationSpec{PerturbKind::none, 0, 1}, PerturbationSpec{PerturbKind::translate, 0, 1},
                    PerturbationSpec{PerturbKind::magnify, 1, 1}, PerturbationSpec{PerturbKind::noise, 0, 1},
                    PerturbationSpec{PerturbKind::blur, 0, 1}}) {
    auto out = apply(s, spec);
    for (std::size_t i = 0; i < s.images.numel(); ++i)
      ASSERT_EQ(std::bit_cast<std::uint32_t>(out.images[i]), std::bit_cast<std::uint32_t>(s.images[i]));
  }
}

TEST(Perturbation, DeterministicForSeedAndValidated) {
  auto s = embed_canvas(digits(3, 6));
  for (auto kind : {PerturbKind::translate, PerturbKind::noise}) {
    PerturbationSpec spec{kind, endpoint(kind), 77};
    auto a = apply(s, spec), b = apply(s, spec);
    for (std::size_t i = 0; i < a.images.numel(); ++i) ASSERT_EQ(a.images[i], b.images[i]);
  }
  EXPECT_THROW(apply(s, {PerturbKind::noise, -1, 0}), std::invalid_argument);
  EXPECT_THROW(apply(s, {PerturbKind::magnify, 0.9, 0}), std::invalid_argument);
  for (auto k : {PerturbKind::none, PerturbKind::translate, PerturbKind::magnify, PerturbKind::noise,
                 PerturbKind::blur})
    EXPECT_EQ(perturb_kind_from_string(to_string(k)), k);
}

TEST(Quadrants, LabelMappingAndPlacement) {
  auto d = blank(400, 28, 50.0f);
  for (std::size_t i = 0; i < d.size(); ++i) d.labels[i] = static_cast<int>(i % 10);
  auto q = make_quadrants(d, 3);
  EXPECT_EQ(q.num_classes, 40u);
  ASSERT_EQ(q.size(), 400u);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const int quad = q.labels[i] % 4;
    EXPECT_EQ(q.labels[i] / 4, d.labels[i]);
    const std::size_t top = (quad / 2) * 32 + 2, left = (quad % 2) * 32 + 2;
    const float* img = q.images.data().data() + i * 64 * 64;
    float total = 0;
    for (std::size_t p = 0; p < 64 * 64; ++p) total += img[p];
    ASSERT_EQ(total, 50.0f * 28 * 28);
    ASSERT_EQ(img[top * 64 + left], 50.0f);
    ASSERT_EQ(img[(top + 27) * 64 + left + 27], 50.0f);
  }
}

TEST(Quadrants, ClassMappingExamples) {
  auto d = blank(1, 28, 50.0f);
  bool saw_top_left[2] = {false, false};
  for (int digit : {0, 1}) {
    d.labels = {digit};
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
      auto q = make_quadrants(d, seed);
      if (q.images[2 * 64 + 2] == 50.0f) {
        EXPECT_EQ(q.labels[0], digit * 4);
        saw_top_left[digit] = true;
      }
    }
  }
  EXPECT_TRUE(saw_top_left[0] && saw_top_left[1]);
}

TEST(Quadrants, QuadrantsAreUniformPerDigit) {
  auto d = blank(4000, 28);
  for (std::size_t i = 0; i < d.size(); ++i) d.labels[i] = static_cast<int>(i % 10);
  auto q = make_quadrants(d, 11);
  boost::math::chi_squared chi(3);
  for (int digit = 0; digit < 10; ++digit) {
    double counts[4] = {0, 0, 0, 0};
    for (int l : q.labels)
      if (l / 4 == digit) counts[l % 4] += 1;
    double stat = 0;
    for (double c : counts) stat += (c - 100.0) * (c - 100.0) / 100.0;
    EXPECT_GT(1.0 - boost::math::cdf(chi, stat), 0.001) << digit;
  }
}

TEST(Batches, NormalisationEndpoints) {
  auto n = normalize(Tensorf::from({2}, {255, 0}));
  EXPECT_EQ(n[0], 1.0f);
  EXPECT_EQ(n[1], 0.0f);
}

TEST(Batches, SameSeedSameOrderCoveringEverySample) {
  auto s = digits(50, 7);
  BatchStream a(s, 8, 3), b(s, 8, 3), c(s, 8, 4);
  EXPECT_EQ(a.batches_per_epoch(), 7u);
  for (int epoch = 0; epoch < 2; ++epoch) {
    std::vector<std::size_t> seen;
    Batch ba, bb;
    while (a.next(ba)) {
      ASSERT_TRUE(b.next(bb));
      EXPECT_EQ(ba.indices, bb.indices);
      EXPECT_EQ(ba.y, bb.y);
      seen.insert(seen.end(), ba.indices.begin(), ba.indices.end());
      for (std::size_t i = 0; i < ba.indices.size(); ++i)
        EXPECT_EQ(ba.x[i * 28 * 28], s.images[ba.indices[i] * 28 * 28] / 255.0f);
    }
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < 50; ++i) ASSERT_EQ(seen[i], i);
    a.reset();
    b.reset();
  }
  EXPECT_NE(a.order(), c.order());
}
