#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "deepconsensus/adversarial/deepfool.h"
#include "deepconsensus/data/idx.h"
#include "deepconsensus/experiments/config.h"
#include "deepconsensus/experiments/results.h"
#include "deepconsensus/nn/model.h"

namespace dc::experiments {

using Logger = std::function<void(const std::string&)>;

/// Training and test sets on the 64x64 canvas, capped as configured.
struct Datasets {
  data::ImageSet train;
  data::ImageSet test;
};

/// Throws data::DataError (with download instructions) when files are missing.
Datasets load_datasets(const RunConfig& config);

std::filesystem::path results_path(const RunConfig& config);
std::filesystem::path model_path(const RunConfig& config, std::uint64_t seed);

/// Loads the cached model for this seed or trains and caches it.
nn::Model<float> obtain_model(const RunConfig& config, std::uint64_t seed, const Datasets& data,
                              const Logger& log = {});

/// Trains one model per seed and evaluates every grid point, appending rows
/// to results_path(config) in seed-major, grid order. Rows already present
/// with the same config hash are kept and not recomputed; rows of the same
/// model under a different hash are an error. Returns every row of this run
/// (old and new) in canonical order.
std::vector<ExperimentResult> run_sweep(const RunConfig& config, const Logger& log = {});

/// run_sweep for each ablation variant, labelled with the variant name.
std::vector<ExperimentResult> run_ablation(const RunConfig& config, bool factorial = false,
                                           const Logger& log = {});

struct AttackOptions {
  std::size_t samples = 100;
  std::uint64_t sample_seed = 0;
  adversarial::DeepFoolOptions deepfool;
  /// Successful attacks drawn into the PGM grid.
  std::size_t grid_images = 8;
};

struct AttackSummary {
  std::string experiment_id;
  std::string model;
  std::uint64_t seed = 0;
  std::string config_hash;
  adversarial::DensityResult density;
};

/// DeepFool against the seeds' models on the test set. Writes per-attack
/// JSONL records, a PGM grid and a line of attacks.csv per seed.
std::vector<AttackSummary> run_attack(const RunConfig& config, const AttackOptions& options,
                                      const Logger& log = {});

}  // namespace dc::experiments
