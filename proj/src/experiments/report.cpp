#include "deepconsensus/experiments/report.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <boost/math/distributions/students_t.hpp>

namespace dc::experiments {

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t: need at least two values per sample");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = std::pow(sample_std(a), 2) / na, vb = std::pow(sample_std(b), 2) / nb;
  const double diff = mean_of(a) - mean_of(b);
  WelchResult r;
  if (va + vb == 0) {
    r.df = na + nb - 2;
    if (diff == 0) return r;
    r.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = diff / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) / (va * va / (na - 1) + vb * vb / (nb - 1));
  boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

Report aggregate(const std::vector<ExperimentResult>& rows) {
  using Key = std::tuple<std::string, std::string, int, double>;
  std::map<Key, SeriesPoint> groups;
  std::map<Key, std::vector<std::vector<double>>> layers;
  for (const auto& r : rows) {
    Key k{r.experiment_id, r.model_descriptor(), static_cast<int>(r.spec.kind), r.spec.magnitude};
    auto [it, inserted] = groups.try_emplace(k);
    auto& s = it->second;
    if (inserted) {
      s.experiment_id = r.experiment_id;
      s.model = r.model_descriptor();
      s.kind = r.spec.kind;
      s.magnitude = r.spec.magnitude;
      s.config_hash = r.config_hash;
    } else if (s.config_hash != r.config_hash) {
      throw std::runtime_error("inconsistent config hashes for " + r.experiment_id + " " + s.model + " " +
                               data::to_string(r.spec.kind) + " " + format_double(r.spec.magnitude) + ": " +
                               s.config_hash + " vs " + r.config_hash);
    }
    s.values.push_back(r.accuracy);
    layers[k].push_back(r.layer_accuracies);
  }
  Report rep;
  for (auto& [k, s] : groups) {
    s.n = s.values.size();
    s.mean = mean_of(s.values);
    s.stddev = sample_std(s.values);
    const auto& ls = layers[k];
    std::size_t width = ls.front().size();
    for (const auto& l : ls) width = std::min(width, l.size());
    for (std::size_t i = 0; i < width; ++i) {
      double sum = 0;
      for (const auto& l : ls) sum += l[i];
      s.layer_means.push_back(sum / static_cast<double>(ls.size()));
    }
    rep.series.push_back(s);
  }
  for (std::size_t i = 0; i < rep.series.size(); ++i)
    for (std::size_t j = i + 1; j < rep.series.size(); ++j) {
      const auto &a = rep.series[i], &b = rep.series[j];
      if (a.experiment_id != b.experiment_id || a.kind != b.kind || a.magnitude != b.magnitude) continue;
      if (a.n < 2 || b.n < 2) continue;
      rep.comparisons.push_back({a.experiment_id, a.kind, a.magnitude, a.model, b.model, a.mean, b.mean,
                                 welch_t(a.values, b.values)});
    }
  return rep;
}

std::vector<ExperimentResult> read_results_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("no results directory at " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
    if (e.path().filename() == "attacks.csv") continue;
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no result files in " + dir.string());
  std::vector<ExperimentResult> rows;
  for (const auto& f : files) {
    auto part = read_results_csv(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

std::string summary_csv(const Report& r) {
  std::ostringstream out;
  out << "experiment_id,model,perturb_kind,magnitude,n,mean,std,layer_means,config_hash\n";
  for (const auto& s : r.series) {
    std::string layers;
    for (std::size_t i = 0; i < s.layer_means.size(); ++i) layers += (i ? ";" : "") + format_double(s.layer_means[i]);
    out << s.experiment_id << ',' << s.model << ',' << data::to_string(s.kind) << ',' << format_double(s.magnitude)
        << ',' << s.n << ',' << format_double(s.mean) << ',' << format_double(s.stddev) << ',' << layers << ','
        << s.config_hash << '\n';
  }
  return out.str();
}

std::string comparisons_csv(const Report& r) {
  std::ostringstream out;
  out << "experiment_id,perturb_kind,magnitude,model_a,model_b,mean_a,mean_b,t,df,p\n";
  for (const auto& c : r.comparisons)
    out << c.experiment_id << ',' << data::to_string(c.kind) << ',' << format_double(c.magnitude) << ','
        << c.model_a << ',' << c.model_b << ',' << format_double(c.mean_a) << ',' << format_double(c.mean_b) << ','
        << format_double(c.test.t) << ',' << format_double(c.test.df) << ',' << format_double(c.test.p) << '\n';
  return out.str();
}

std::string summary_table(const Report& r) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %-36s %-10s %8s %3s %8s %8s\n", "experiment", "model", "perturb", "mag", "n",
                "mean", "std");
  out << buf;
  for (const auto& s : r.series) {
    std::snprintf(buf, sizeof buf, "%-16s %-36s %-10s %8g %3zu %8.4f %8.4f\n", s.experiment_id.c_str(),
                  s.model.c_str(), data::to_string(s.kind).c_str(), s.magnitude, s.n, s.mean, s.stddev);
    out << buf;
  }
  if (!r.comparisons.empty()) {
    out << "\nWelch two-tailed t-tests\n";
    for (const auto& c : r.comparisons) {
      std::snprintf(buf, sizeof buf, "%-16s %-10s %8g  %s vs %s: t=%.3f df=%.1f p=%.3g\n", c.experiment_id.c_str(),
                    data::to_string(c.kind).c_str(), c.magnitude, c.model_a.c_str(), c.model_b.c_str(), c.test.t,
                    c.test.df, c.test.p);
      out << buf;
    }
  }
  return out.str();
}

Report write_report(const std::filesystem::path& dir) {
  auto rep = aggregate(read_results_dir(dir));
  const auto out_dir = dir / "report";
  std::filesystem::create_directories(out_dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream f(out_dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + (out_dir / name).string());
    f << text;
  };
  write("summary.csv", summary_csv(rep));
  write("welch.csv", comparisons_csv(rep));
  write("summary.txt", summary_table(rep));
  return rep;
}

}  // namespace dc::experiments
