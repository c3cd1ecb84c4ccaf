#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <set>

#include "deepconsensus/autodiff/ops.h"
#include "deepconsensus/autodiff/tape.h"
#include "deepconsensus/data/batches.h"
#include "deepconsensus/training/train.h"

using namespace dc;
using namespace dc::training;

namespace {

data::ImageSet mnist_slice(std::size_t n) {
  const auto dir = data::data_root("/root/data/mnist");
  return data::embed_canvas(data::head(data::load_mnist(dir, data::Split::train), n));
}

bool have_mnist() {
  return std::filesystem::exists(data::data_root("/root/data/mnist") / "train-images-idx3-ubyte");
}

}  // namespace

TEST(Split, SizesDisjointAndExhaustive) {
  auto s = split_indices(60000, 0.2, 4);
  EXPECT_EQ(s.train.size(), 48000u);
  EXPECT_EQ(s.val.size(), 12000u);
  std::vector<bool> hit(60000, false);
  for (auto i : s.train) hit[i] = true;
  for (auto i : s.val) {
    ASSERT_FALSE(hit[i]);
    hit[i] = true;
  }
  for (bool h : hit) ASSERT_TRUE(h);
  auto again = split_indices(60000, 0.2, 4);
  EXPECT_EQ(again.val, s.val);
  EXPECT_NE(split_indices(60000, 0.2, 5).val, s.val);
}

TEST(Split, EmptyPartitionIsAnError) {
  EXPECT_THROW(split_indices(3, 0.1, 0), std::invalid_argument);
  EXPECT_THROW(split_indices(10, 1.0, 0), std::invalid_argument);
}

TEST(Plateau, ImprovingScoresKeepRate) {
  PlateauScheduler p(1e-3);
  for (double s : {0.9, 0.91, 0.92}) EXPECT_DOUBLE_EQ(p.step(s), 1e-3);
}

TEST(Plateau, ReducesAtThirdStagnantEpoch) {
  PlateauScheduler p(1e-3);
  EXPECT_DOUBLE_EQ(p.step(0.92), 1e-3);
  EXPECT_DOUBLE_EQ(p.step(0.92), 1e-3);
  EXPECT_DOUBLE_EQ(p.step(0.92), 1e-3);
  EXPECT_NEAR(p.step(0.92), 1e-4, 1e-18);
}

TEST(Plateau, TwoPlateausCompose) {
  PlateauScheduler p(1e-3);
  p.step(0.5);
  double lr = 0;
  for (int i = 0; i < 20 && p.reductions() < 2; ++i) lr = p.step(0.5);
  EXPECT_EQ(p.reductions(), 2u);
  EXPECT_NEAR(lr, 1e-5, 1e-18);
}

TEST(Plateau, ImprovementBelowThresholdCountsAsStagnant) {
  PlateauScheduler p(1.0);
  p.step(0.5);
  p.step(0.50005);
  p.step(0.50009);
  EXPECT_DOUBLE_EQ(p.step(0.50009), 0.1);
}

TEST(Plateau, RateNeverIncreases) {
  PlateauScheduler p(1.0);
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> d(0, 1);
  double prev = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double lr = p.step(d(rng) * 0.3 + i * 0.001);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Config, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.val_fraction = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.plateau_factor = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.plateau_patience = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Evaluate, ConstantPredictorOnOneClassSet) {
  TrainConfig c;
  c.head = nn::HeadKind::fully_connected;
  nn::Model<float> m(graph_for(c, 1, 10), 0);
  auto params = m.named_parameters();
  auto& last_bias = params.back().second;
  ASSERT_EQ(last_bias.numel(), 10u);
  last_bias[4] = 100.0f;
  data::ImageSet s;
  s.images = Tensorf({7, 1, 64, 64}, 30.0f);
  s.labels.assign(7, 4);
  s.num_classes = 10;
  EXPECT_DOUBLE_EQ(evaluate(m, s).accuracy, 1.0);
}

TEST(Evaluate, OptOutLogitNeverWins) {
  TrainConfig c;
  nn::Model<float> m(graph_for(c, 1, 10), 0);
  ASSERT_EQ(m.output_size(), 11u);
  // Point every layer's opt-out prototype straight at its summary direction.
  for (auto& bank : m.head().banks()) {
    for (std::size_t j = 0; j < bank.prototypes.numel(); ++j) bank.prototypes[j] = 0.0f;
    for (std::size_t ch = 0; ch < bank.channels; ++ch) bank.prototypes[10 * bank.channels + ch] = 1.0f;
    for (std::size_t ch = 0; ch < bank.channels; ++ch) bank.prototypes[3 * bank.channels + ch] = 0.5f;
  }
  data::ImageSet s;
  s.images = Tensorf({3, 1, 64, 64}, 100.0f);
  s.labels.assign(3, 3);
  s.num_classes = 10;
  EXPECT_DOUBLE_EQ(evaluate(m, s).accuracy, 1.0);
}

TEST(Evaluate, IdentitySpecMatchesRawAndConsensusEqualsLayerSum) {
  TrainConfig c;
  c.width_divisor = 4;
  nn::Model<float> m(graph_for(c, 1, 10), 3);
  data::ImageSet s;
  s.images = Tensorf({20, 1, 64, 64});
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> px(0, 255);
  for (auto& v : s.images.data()) v = px(rng);
  for (int i = 0; i < 20; ++i) s.labels.push_back(i % 10);
  s.num_classes = 10;
  {
    NoGradGuard g;
    m.forward(data::normalize(s.images));
  }
  auto a = evaluate(m, s, {});
  auto b = evaluate(m, s, {data::PerturbKind::translate, 0, 9});
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.layer_accuracies, b.layer_accuracies);
  ASSERT_EQ(a.layer_accuracies.size(), 4u);

  m.set_training(false);
  NoGradGuard g;
  auto out = m.forward(data::make_batch(s, 0, 20).x);
  auto total = out.per_layer[0];
  for (std::size_t l = 1; l < 4; ++l) total = add(total, out.per_layer[l]);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t k = 0; k < total.dim(1); ++k) ASSERT_EQ(total[i * 11 + k], out.logits[i * 11 + k]);
    if (nn::argmax_row(total, i, 10) == static_cast<std::size_t>(s.labels[i])) ++correct;
  }
  EXPECT_DOUBLE_EQ(a.accuracy, correct / 20.0);
}

TEST(Train, LossDecreasesAndRunsAreDeterministic) {
  if (!have_mnist()) GTEST_SKIP() << "MNIST not present";
  auto data = mnist_slice(512);
  TrainConfig c;
  c.epochs = 2;
  c.seed = 1;
  auto r1 = train(c, data);
  ASSERT_EQ(r1.log.epochs.size(), 2u);
  EXPECT_LT(r1.log.epochs[1].train_loss, r1.log.epochs[0].train_loss);
  auto r2 = train(c, data);
  EXPECT_EQ(r1.log, r2.log);
  EXPECT_FALSE(r1.model.training());
}

TEST(Train, BothHeadsComplete) {
  if (!have_mnist()) GTEST_SKIP() << "MNIST not present";
  auto data = mnist_slice(128);
  for (auto head : {nn::HeadKind::consensus, nn::HeadKind::fully_connected}) {
    TrainConfig c;
    c.epochs = 1;
    c.head = head;
    c.width_divisor = 2;
    auto r = train(c, data);
    EXPECT_EQ(r.log.epochs.size(), 1u);
    EXPECT_TRUE(std::isfinite(r.log.epochs[0].train_loss));
  }
}

TEST(Train, DivergenceIsReported) {
  data::ImageSet s;
  s.images = Tensorf({40, 1, 16, 16}, 10.0f);
  s.images[5] = std::numeric_limits<float>::quiet_NaN();
  for (int i = 0; i < 40; ++i) s.labels.push_back(i % 2);
  s.num_classes = 2;
  TrainConfig c;
  c.epochs = 1;
  c.head = nn::HeadKind::fully_connected;
  c.width_divisor = 8;
  EXPECT_THROW(train(c, s), DivergenceError);
}

TEST(Train, JsonlHasOneRecordPerEpoch) {
  TrainLog log;
  log.epochs = {{1, 0.5, 0.9, 1e-3}, {2, 0.4, 0.92, 1e-3}};
  auto text = log.to_jsonl();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_NE(text.find("\"val_accuracy\":0.92"), std::string::npos);
}
