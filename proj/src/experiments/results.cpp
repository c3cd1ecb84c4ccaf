#include "deepconsensus/experiments/results.h"

#include <charconv>
#include <sstream>
#include <stdexcept>

namespace dc::experiments {

const char* const kCsvHeader =
    "experiment_id,arch,head,ablation,seed,perturb_kind,magnitude,accuracy,layer_accuracies,epochs,config_hash";

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

std::string ExperimentResult::key() const {
  return experiment_id + "|" + model_descriptor() + "|" + std::to_string(seed) + "|" + data::to_string(spec.kind) +
         "|" + format_double(spec.magnitude) + "|" + config_hash;
}

std::string to_csv_row(const ExperimentResult& r) {
  std::string layers;
  for (std::size_t i = 0; i < r.layer_accuracies.size(); ++i) {
    if (i) layers += ';';
    layers += format_double(r.layer_accuracies[i]);
  }
  std::ostringstream out;
  out << r.experiment_id << ',' << r.arch << ',' << r.head << ',' << r.ablation << ',' << r.seed << ','
      << data::to_string(r.spec.kind) << ',' << format_double(r.spec.magnitude) << ',' << format_double(r.accuracy)
      << ',' << layers << ',' << r.epochs << ',' << r.config_hash;
  return out.str();
}

namespace {

double parse_double(const std::string& s, const std::string& line) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error("bad number '" + s + "' in row: " + line);
  return v;
}

std::uint64_t parse_uint(const std::string& s, const std::string& line) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error("bad integer '" + s + "' in row: " + line);
  return v;
}

}  // namespace

ExperimentResult parse_csv_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  if (f.size() != 11) throw std::runtime_error("expected 11 columns, got " + std::to_string(f.size()) + ": " + line);
  ExperimentResult r;
  r.experiment_id = f[0];
  r.arch = f[1];
  r.head = f[2];
  r.ablation = f[3];
  r.seed = parse_uint(f[4], line);
  r.spec.kind = data::perturb_kind_from_string(f[5]);
  r.spec.magnitude = parse_double(f[6], line);
  r.accuracy = parse_double(f[7], line);
  std::stringstream layers(f[8]);
  while (std::getline(layers, cell, ';'))
    if (!cell.empty()) r.layer_accuracies.push_back(parse_double(cell, line));
  r.epochs = parse_uint(f[9], line);
  r.config_hash = f[10];
  return r;
}

std::vector<ExperimentResult> read_results_csv(const std::filesystem::path& path, std::size_t* torn_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto last_nl = text.rfind('\n');
  const std::size_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (torn_bytes) *torn_bytes = text.size() - complete;
  std::vector<ExperimentResult> rows;
  std::stringstream lines(text.substr(0, complete));
  std::string line;
  bool header = true;
  while (std::getline(lines, line)) {
    if (header) {
      if (line != kCsvHeader) throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
      header = false;
      continue;
    }
    if (!line.empty()) rows.push_back(parse_csv_row(line));
  }
  return rows;
}

OrderedAppender::OrderedAppender(std::filesystem::path path, std::vector<bool> already_done)
    : path_(std::move(path)), done_(std::move(already_done)) {
  std::size_t torn = 0;
  if (std::filesystem::exists(path_)) {
    read_results_csv(path_, &torn);
    if (torn > 0) std::filesystem::resize_file(path_, std::filesystem::file_size(path_) - torn);
  }
  const bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw std::runtime_error("cannot open " + path_.string() + " for appending");
  if (fresh) out_ << kCsvHeader << '\n' << std::flush;
  drain();
}

void OrderedAppender::submit(std::size_t index, const ExperimentResult& row) {
  std::lock_guard lock(mu_);
  if (index >= done_.size()) throw std::out_of_range("appender: row index out of range");
  pending_[index] = to_csv_row(row);
  drain();
}

void OrderedAppender::drain() {
  while (next_ < done_.size()) {
    if (done_[next_]) {
      ++next_;
      continue;
    }
    auto it = pending_.find(next_);
    if (it == pending_.end()) break;
    out_ << it->second << '\n' << std::flush;
    if (!out_) throw std::runtime_error("write failed on " + path_.string());
    pending_.erase(it);
    ++written_;
    ++next_;
  }
}

std::size_t OrderedAppender::written() const {
  std::lock_guard lock(mu_);
  return written_;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << line << '\n';
}

}  // namespace dc::experiments
