#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "deepconsensus/data/idx.h"
#include "deepconsensus/data/transforms.h"
#include "deepconsensus/nn/model.h"

namespace dc::training {

/// Raised when the training loss becomes NaN or infinite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double initial_lr = 1e-3;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 3;
  double plateau_threshold = 1e-4;
  std::size_t plateau_cooldown = 1;
  double val_fraction = 0.2;
  /// Weight initialisation seed; also drives the split and shuffling unless
  /// data_seed is set.
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;
  nn::Arch arch = nn::Arch::cnn_small;
  nn::HeadKind head = nn::HeadKind::consensus;
  consensus::HeadConfig head_config;
  std::size_t width_divisor = 1;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
  std::uint64_t effective_data_seed() const { return data_seed.value_or(seed); }
};

/// Disjoint, exhaustive, seed-determined partition.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
SplitIndices split_indices(std::size_t n, double val_fraction, std::uint64_t seed);
std::pair<data::ImageSet, data::ImageSet> split(const data::ImageSet& set, double val_fraction,
                                                std::uint64_t seed);

/// Reduce-on-plateau for a score that should increase.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor = 0.1, std::size_t patience = 3, double threshold = 1e-4,
                   std::size_t cooldown = 1);

  /// Feeds one epoch's validation score and returns the learning rate to use next.
  double step(double score);
  double lr() const { return lr_; }
  std::size_t reductions() const { return reductions_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double threshold_;
  std::size_t cooldown_;
  bool has_best_ = false;
  double best_ = 0.0;
  std::size_t bad_epochs_ = 0;
  std::size_t cooldown_left_ = 0;
  std::size_t reductions_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;

  bool operator==(const TrainLog&) const = default;
  /// One JSON object per epoch.
  std::string to_jsonl() const;
  void write_jsonl(const std::filesystem::path& path) const;
};

struct EvalResult {
  double accuracy = 0.0;
  /// Consensus models only, in tap order.
  std::vector<double> layer_accuracies;
  std::size_t samples = 0;
};

/// Accuracy over the c real classes (the opt-out logit never wins), in eval
/// mode, after applying `spec` to `set` in intensity space.
EvalResult evaluate(nn::Model<float>& model, const data::ImageSet& set,
                    const data::PerturbationSpec& spec = {}, std::size_t batch_size = 100);

struct TrainResult {
  nn::Model<float> model;       // after the last epoch
  nn::Model<float> best_model;  // best validation accuracy
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Splits `data` (already on the canvas) into train/validation, builds the
/// network from the config and runs the epoch loop.
TrainResult train(const TrainConfig& config, const data::ImageSet& data, const EpochCallback& on_epoch = {});

/// Network described by the config for images of this shape.
nn::LayerGraph graph_for(const TrainConfig& config, std::size_t in_channels, std::size_t num_classes,
                         std::size_t input_size = 64);

}  // namespace dc::training
