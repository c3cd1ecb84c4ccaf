#include <gtest/gtest.h>

#include <cmath>
#include <bit>
#include <filesystem>
#include <fstream>

#include "deepconsensus/autodiff/ops.h"
#include "deepconsensus/nn/checkpoint.h"
#include "deepconsensus/nn/model.h"
#include "gradcheck.h"

using namespace dc;
using namespace dc::nn;
using dc::testing::check_gradients;

namespace {

constexpr Arch kArchs[] = {Arch::cnn_small, Arch::cnn, Arch::resnet};

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dc_test_" + name);
}

template <typename T>
Tensor<T> random_images(std::size_t n, std::size_t c, std::size_t size, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Tensor<T> x({n, c, size, size});
  for (auto& v : x.data()) v = static_cast<T>(d(rng));
  return x;
}

}  // namespace

TEST(Graph, EveryConvIsFollowedByBatchNormAndActivationsAreLeaky) {
  for (auto arch : kArchs)
    for (auto head : {HeadKind::consensus, HeadKind::fully_connected}) {
      auto g = build_graph(arch, head, 1, 10);
      for (std::size_t i = 0; i < g.layers.size(); ++i) {
        if (g.layers[i].kind == LayerKind::conv) {
          ASSERT_LT(i + 1, g.layers.size());
          EXPECT_EQ(g.layers[i + 1].kind, LayerKind::batchnorm);
        }
      }
      EXPECT_EQ(g.tap_points.size(), 4u);
      for (std::size_t t = 1; t < g.tap_points.size(); ++t) EXPECT_GT(g.tap_points[t], g.tap_points[t - 1]);
    }
}

TEST(Graph, ResNetShortcutsProjectWithStrideTwo) {
  auto g = build_graph(Arch::resnet, HeadKind::consensus, 1, 10);
  ASSERT_EQ(g.residuals.size(), 6u);
  std::size_t projections = 0;
  for (const auto& r : g.residuals) {
    if (r.projection) {
      ++projections;
      EXPECT_EQ(r.stride, 2u);
    }
  }
  EXPECT_EQ(projections, 3u);
  auto shapes = infer_shapes(g);
  std::vector<std::size_t> sizes;
  for (auto t : g.tap_points) sizes.push_back(shapes[t].height);
  EXPECT_EQ(sizes, (std::vector<std::size_t>{32, 16, 8, 4}));
}

TEST(Graph, ValidationCatchesBrokenGraphs) {
  auto g = build_graph(Arch::cnn_small, HeadKind::consensus, 1, 10);
  auto bad = g;
  bad.tap_points = {};
  EXPECT_THROW(validate(bad), ShapeError);
  bad = g;
  std::swap(bad.tap_points[0], bad.tap_points[1]);
  EXPECT_THROW(validate(bad), ShapeError);
  bad = g;
  bad.layers[0].in_channels = 3;
  EXPECT_THROW(validate(bad), ShapeError);
  auto r = build_graph(Arch::resnet, HeadKind::consensus, 1, 10);
  r.residuals[0].projection = false;
  EXPECT_THROW(validate(r), ShapeError);
  EXPECT_THROW(arch_from_string("vgg"), std::invalid_argument);
}

TEST(Graph, NamesRoundTrip) {
  for (auto a : kArchs) EXPECT_EQ(arch_from_string(to_string(a)), a);
  for (auto h : {HeadKind::consensus, HeadKind::fully_connected}) EXPECT_EQ(head_from_string(to_string(h)), h);
}

TEST(Model, ParameterCountsNearTargets) {
  const auto count = [](Arch a, HeadKind h) { return Model<float>(build_graph(a, h, 1, 10), 0).parameter_count(); };
  const double small = count(Arch::cnn_small, HeadKind::consensus);
  const double cnn = count(Arch::cnn, HeadKind::consensus);
  const double resnet = count(Arch::resnet, HeadKind::consensus);
  const double base_cnn = count(Arch::cnn, HeadKind::fully_connected);
  EXPECT_NEAR(small / 130e3, 1.0, 0.2) << small;
  EXPECT_NEAR(cnn / 1.2e6, 1.0, 0.2) << cnn;
  EXPECT_NEAR(resnet / 3.1e6, 1.0, 0.2) << resnet;
  EXPECT_NEAR(base_cnn / 1.4e6, 1.0, 0.2) << base_cnn;
}

TEST(Model, ZeroInputSmokeForward) {
  for (auto arch : kArchs)
    for (auto head : {HeadKind::consensus, HeadKind::fully_connected})
      for (std::size_t channels : {1, 3}) {
        Model<float> m(build_graph(arch, head, channels, 10), 1);
        m.set_training(false);
        NoGradGuard g;
        auto out = m.forward(Tensorf({2, channels, 64, 64}));
        const std::size_t k = head == HeadKind::consensus ? 11 : 10;
        ASSERT_EQ(out.logits.shape(), (Shape{2, k}));
        for (float v : out.logits.data()) EXPECT_TRUE(std::isfinite(v));
        EXPECT_EQ(out.per_layer.size(), head == HeadKind::consensus ? 4u : 0u);
      }
}

TEST(Model, RejectsWrongInputShape) {
  Model<float> m(build_graph(Arch::cnn_small, HeadKind::consensus, 1, 10), 1);
  EXPECT_THROW(m.forward(Tensorf({1, 1, 32, 32})), ShapeError);
}

TEST(Model, SameSeedSameWeights) {
  auto g = build_graph(Arch::cnn_small, HeadKind::consensus, 1, 10);
  Model<float> a(g, 5), b(g, 5), c(g, 6);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i].numel(); ++j) {
      ASSERT_EQ(pa[i][j], pb[i][j]);
      differs |= pa[i][j] != pc[i][j];
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Model, WeightsFollowInitialisationScale) {
  Model<float> m(build_graph(Arch::cnn, HeadKind::consensus, 1, 10), 3);
  double s = 0, s2 = 0;
  std::size_t n = 0;
  for (auto& [name, t] : m.named_parameters()) {
    if (name.find("weight") == std::string::npos && name.find("prototypes") == std::string::npos) continue;
    for (float v : t.data()) {
      s += v;
      s2 += double(v) * v;
      ++n;
    }
  }
  EXPECT_NEAR(s / n, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.02, 1e-3);
}

TEST(Model, EvalIsBatchSizeIndependent) {
  for (auto arch : kArchs) {
    Model<float> m(build_graph(arch, HeadKind::consensus, 1, 10), 2);
    // A couple of training-mode passes give non-trivial running statistics.
    for (unsigned s = 0; s < 2; ++s) {
      NoGradGuard g;
      m.forward(random_images<float>(4, 1, 64, 10 + s));
    }
    m.set_training(false);
    NoGradGuard g;
    auto batch = random_images<float>(3, 1, 64, 20);
    auto all = m.forward(batch).logits;
    Tensorf one({1, 1, 64, 64});
    std::copy(batch.data().begin() + 64 * 64, batch.data().begin() + 2 * 64 * 64, one.data().begin());
    auto single = m.forward(one).logits;
    const std::size_t K = m.output_size();
    for (std::size_t k = 0; k < K; ++k) EXPECT_NEAR(single[k], all[K + k], 1e-5) << to_string(arch);
  }
}

TEST(Model, FullNetworkGradientOnTinyInput) {
  NetworkOptions opt;
  opt.input_size = 8;
  opt.width_divisor = 4;
  Model<double> m(build_graph(Arch::cnn_small, HeadKind::consensus, 1, 10, opt), 4);
  auto x = random_images<double>(2, 1, 8, 5);
  const int targets[] = {3, 7};
  auto r = check_gradients([&] { return nn::softmax_cross_entropy(m.forward(x).logits, targets); },
                           m.parameters(), 1e-6, 12);
  EXPECT_LT(r.max_error, 1e-3);
  EXPECT_GT(r.checked, 100u);
}

TEST(Model, MiniatureGradientEveryArchitectureAndHead) {
  NetworkOptions opt;
  opt.input_size = 16;
  opt.width_divisor = 8;
  for (auto arch : kArchs)
    for (auto head : {HeadKind::consensus, HeadKind::fully_connected}) {
      Model<double> m(build_graph(arch, head, 1, 4, opt), 6);
      auto x = random_images<double>(3, 1, 16, 7);
      x.set_requires_grad(true);
      const int targets[] = {0, 3, 1};
      auto params = m.parameters();
      params.push_back(x);
      auto r = check_gradients([&] { return nn::softmax_cross_entropy(m.forward(x).logits, targets); },
                               params, 1e-6, 6);
      EXPECT_LT(r.max_error, 1e-3) << to_string(arch) << " " << to_string(head);
    }
}

TEST(Model, CloneSharesNoStorage) {
  Model<float> m(build_graph(Arch::resnet, HeadKind::consensus, 1, 10), 3);
  auto c = m.clone();
  auto pm = m.named_parameters();
  auto pc = c.named_parameters();
  ASSERT_EQ(pm.size(), pc.size());
  for (std::size_t i = 0; i < pm.size(); ++i) {
    EXPECT_EQ(pm[i].first, pc[i].first);
    EXPECT_FALSE(pm[i].second.same_storage(pc[i].second));
    for (std::size_t j = 0; j < pm[i].second.numel(); ++j) ASSERT_EQ(pm[i].second[j], pc[i].second[j]);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (auto arch : kArchs) {
    consensus::HeadConfig cfg;
    cfg.distance = consensus::Distance::euclidean;
    NetworkOptions opt;
    opt.head_config = cfg;
    Model<float> m(build_graph(arch, HeadKind::consensus, 1, 10, opt), 11);
    {
      NoGradGuard g;
      m.forward(random_images<float>(2, 1, 64, 3));
    }
    const auto path = temp_path("ckpt_" + to_string(arch));
    save_checkpoint(m, path);
    auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.seed(), 11u);
    EXPECT_EQ(loaded.graph().options.head_config, cfg);
    EXPECT_EQ(loaded.graph().layers, m.graph().layers);
    auto a = m.named_parameters(), b = loaded.named_parameters();
    auto ab = m.named_buffers(), bb = loaded.named_buffers();
    a.insert(a.end(), ab.begin(), ab.end());
    b.insert(b.end(), bb.begin(), bb.end());
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i].first, b[i].first);
      for (std::size_t j = 0; j < a[i].second.numel(); ++j)
        ASSERT_EQ(std::bit_cast<std::uint32_t>(a[i].second[j]), std::bit_cast<std::uint32_t>(b[i].second[j]));
    }
    std::filesystem::remove(path);
  }
}

TEST(Checkpoint, MalformedFilesAreRejected) {
  const auto path = temp_path("bad_ckpt");
  {
    std::ofstream f(path);
    f << "NOPE\n";
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  Model<float> m(build_graph(Arch::cnn_small, HeadKind::consensus, 1, 10), 1);
  save_checkpoint(m, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}
