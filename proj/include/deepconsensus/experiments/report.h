#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deepconsensus/experiments/results.h"

namespace dc::experiments {

double mean_of(std::span<const double> v);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(std::span<const double> v);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-tailed
};

/// Two-sample t-test with unequal variances. Needs two values per side.
WelchResult welch_t(std::span<const double> a, std::span<const double> b);

/// Mean and spread across seeds of one model at one perturbation.
struct SeriesPoint {
  std::string experiment_id;
  std::string model;  // arch/head/ablation
  data::PerturbKind kind = data::PerturbKind::none;
  double magnitude = 0.0;
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> layer_means;
  std::vector<double> values;
  std::string config_hash;
};

struct Comparison {
  std::string experiment_id;
  data::PerturbKind kind = data::PerturbKind::none;
  double magnitude = 0.0;
  std::string model_a;
  std::string model_b;
  double mean_a = 0.0;
  double mean_b = 0.0;
  WelchResult test;
};

struct Report {
  std::vector<SeriesPoint> series;
  std::vector<Comparison> comparisons;
};

/// Groups by (experiment, model, perturbation). Throws std::runtime_error
/// when one group mixes config hashes.
Report aggregate(const std::vector<ExperimentResult>& rows);

/// Every results CSV directly inside `dir` (attacks.csv and report outputs
/// excluded). Throws if none is found.
std::vector<ExperimentResult> read_results_dir(const std::filesystem::path& dir);

std::string summary_csv(const Report& r);
std::string comparisons_csv(const Report& r);
std::string summary_table(const Report& r);

/// Aggregates `dir` and writes summary.csv, welch.csv and summary.txt into
/// dir/report.
Report write_report(const std::filesystem::path& dir);

}  // namespace dc::experiments
