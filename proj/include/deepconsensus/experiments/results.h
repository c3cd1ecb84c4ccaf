#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "deepconsensus/data/transforms.h"

namespace dc::experiments {

struct ExperimentResult {
  std::string experiment_id;
  std::string arch;
  std::string head;
  std::string ablation = "none";
  std::uint64_t seed = 0;
  data::PerturbationSpec spec;
  double accuracy = 0.0;
  std::vector<double> layer_accuracies;
  std::size_t epochs = 0;
  std::string config_hash;
  /// Seconds spent evaluating this row; not part of the CSV.
  double wall_time = 0.0;

  std::string model_descriptor() const { return arch + "/" + head + "/" + ablation; }
  /// (experiment id, model, seed, spec, config hash)
  std::string key() const;
};

extern const char* const kCsvHeader;

/// Shortest text that reads back to the same double.
std::string format_double(double v);

std::string to_csv_row(const ExperimentResult& r);
/// Throws std::runtime_error naming the line on malformed rows.
ExperimentResult parse_csv_row(const std::string& line);

/// Reads complete rows; a trailing line without a newline (torn write) is
/// dropped and reported through `torn_bytes`.
std::vector<ExperimentResult> read_results_csv(const std::filesystem::path& path,
                                               std::size_t* torn_bytes = nullptr);

/// Appends rows in sequence order from any number of producer threads.
/// Row i is written once rows 0..i-1 have been written or marked done, so
/// the file is always a prefix of the canonical order. Each row is flushed.
class OrderedAppender {
 public:
  /// Creates the file with a header if absent; truncates a torn last line.
  OrderedAppender(std::filesystem::path path, std::vector<bool> already_done);

  void submit(std::size_t index, const ExperimentResult& row);
  std::size_t written() const;

 private:
  void drain();

  std::filesystem::path path_;
  std::vector<bool> done_;
  std::map<std::size_t, std::string> pending_;
  std::size_t next_ = 0;
  std::size_t written_ = 0;
  std::ofstream out_;
  mutable std::mutex mu_;
};

/// Appends one line to a JSONL side log under a process-wide lock.
void append_line(const std::filesystem::path& path, const std::string& line);

}  // namespace dc::experiments
