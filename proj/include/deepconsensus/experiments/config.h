#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepconsensus/data/transforms.h"
#include "deepconsensus/nn/graph.h"
#include "deepconsensus/training/train.h"

namespace dc::experiments {

enum class DatasetKind { mnist, quadrants };
std::string to_string(DatasetKind d);
DatasetKind dataset_from_string(const std::string& name);

/// One perturbation kind and the magnitudes to evaluate it at.
struct GridAxis {
  data::PerturbKind kind = data::PerturbKind::none;
  std::vector<double> magnitudes;

  bool operator==(const GridAxis&) const = default;
};

/// Parses "translate:0,4,8" or "translate" (default magnitudes).
GridAxis parse_grid_axis(const std::string& text);
std::string format_grid_axis(const GridAxis& axis);

struct RunConfig {
  std::string experiment_id = "sweep";
  DatasetKind dataset = DatasetKind::mnist;
  /// Empty: $DC_DATA_DIR, then the build-time default.
  std::filesystem::path data_dir;
  nn::Arch arch = nn::Arch::cnn_small;
  nn::HeadKind head = nn::HeadKind::consensus;
  /// Label written to the results; the head config carries the substance.
  std::string ablation = "none";
  consensus::HeadConfig head_config;
  std::vector<GridAxis> grid = {{data::PerturbKind::none, {0.0}}};
  std::vector<std::uint64_t> seeds = {0, 1};
  /// When set, every run starts from this initialisation and the seed list
  /// only varies the split and batch order.
  std::optional<std::uint64_t> fixed_init;
  std::size_t train_samples = 10000;  // 0 keeps the full training set
  std::size_t test_samples = 0;       // 0 keeps the full test set
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double initial_lr = 1e-3;
  std::size_t width_divisor = 1;
  std::uint64_t perturb_seed = 1234;
  std::uint64_t quadrant_seed = 0;
  /// Evaluate the best-validation checkpoint instead of the last epoch.
  bool use_best_checkpoint = false;
  std::filesystem::path output_dir = "results";
  std::size_t workers = 1;

  /// Throws std::invalid_argument with the offending field.
  void validate() const;
  /// Every (kind, magnitude) pair in grid order.
  std::vector<data::PerturbationSpec> specs() const;
  training::TrainConfig train_config(std::uint64_t seed) const;
  /// "arch/head/ablation"
  std::string model_descriptor() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

/// FNV-1a over the canonical JSON of every field that changes a result
/// value (seeds and grid excluded; they key rows instead). 16 hex digits.
std::string config_hash(const RunConfig& c);
/// Same over the fields that determine the trained weights for one seed.
std::string model_hash(const RunConfig& c, std::uint64_t seed);
std::string fnv1a_hex(const std::string& text);

struct AblationVariant {
  std::string name;
  consensus::HeadConfig head_config;
};

/// One-factor variants around `base`: full, euclidean, fully_connected,
/// c_prototypes, no_h. With `factorial`, all 12 combinations of
/// {cosine, euclidean, fully_connected} x {c, c+1} x {h on, h off}.
std::vector<AblationVariant> ablation_variants(const consensus::HeadConfig& base, bool factorial = false);

}  // namespace dc::experiments
