#include "deepconsensus/experiments/config.h"

#include <cctype>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace dc::experiments {

using nlohmann::json;

std::string to_string(DatasetKind d) { return d == DatasetKind::mnist ? "mnist" : "quadrants"; }

DatasetKind dataset_from_string(const std::string& name) {
  if (name == "mnist") return DatasetKind::mnist;
  if (name == "quadrants" || name == "mnist-quadrants") return DatasetKind::quadrants;
  throw std::invalid_argument("unknown dataset '" + name + "' (expected mnist or quadrants)");
}

GridAxis parse_grid_axis(const std::string& text) {
  GridAxis axis;
  const auto colon = text.find(':');
  axis.kind = data::perturb_kind_from_string(text.substr(0, colon));
  if (colon == std::string::npos) {
    axis.magnitudes = data::default_grid(axis.kind);
    return axis;
  }
  std::stringstream rest(text.substr(colon + 1));
  std::string item;
  while (std::getline(rest, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw std::invalid_argument("bad magnitude '" + item + "' in grid '" + text + "'");
    axis.magnitudes.push_back(v);
  }
  if (axis.magnitudes.empty()) throw std::invalid_argument("grid '" + text + "' lists no magnitudes");
  return axis;
}

std::string format_grid_axis(const GridAxis& axis) {
  std::string out = data::to_string(axis.kind) + ":";
  for (std::size_t i = 0; i < axis.magnitudes.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", axis.magnitudes[i]);
    if (i) out += ',';
    out += buf;
  }
  return out;
}

namespace {

bool safe_label(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.' || ch == '+'))
      return false;
  return true;
}

json head_json(const consensus::HeadConfig& h) {
  return {{"distance", consensus::to_string(h.distance)},
          {"opt_out_prototype", h.opt_out_prototype},
          {"use_nonlinearity", h.use_nonlinearity},
          {"layer_weights", h.layer_weights},
          {"opt_out_in_softmax", h.opt_out_in_softmax},
          {"temperature", h.temperature}};
}

consensus::HeadConfig head_from(const json& j) {
  consensus::HeadConfig h;
  h.distance = consensus::distance_from_string(j.value("distance", std::string("cosine")));
  h.opt_out_prototype = j.value("opt_out_prototype", h.opt_out_prototype);
  h.use_nonlinearity = j.value("use_nonlinearity", h.use_nonlinearity);
  h.layer_weights = j.value("layer_weights", h.layer_weights);
  h.opt_out_in_softmax = j.value("opt_out_in_softmax", h.opt_out_in_softmax);
  h.temperature = j.value("temperature", h.temperature);
  return h;
}

// Fields that determine the trained weights, shared by both hashes.
json training_identity(const RunConfig& c) {
  json j = {{"dataset", to_string(c.dataset)},
            {"arch", nn::to_string(c.arch)},
            {"head", nn::to_string(c.head)},
            {"head_config", head_json(c.head_config)},
            {"train_samples", c.train_samples},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"initial_lr", c.initial_lr},
            {"width_divisor", c.width_divisor},
            {"use_best_checkpoint", c.use_best_checkpoint}};
  if (c.dataset == DatasetKind::quadrants) j["quadrant_seed"] = c.quadrant_seed;
  if (c.fixed_init) j["fixed_init"] = *c.fixed_init;
  return j;
}

}  // namespace

void RunConfig::validate() const {
  if (!safe_label(experiment_id))
    throw std::invalid_argument("experiment_id must be non-empty and use only letters, digits, _ - . +");
  if (!safe_label(ablation)) throw std::invalid_argument("ablation label must use only letters, digits, _ - . +");
  if (seeds.empty()) throw std::invalid_argument("seeds: at least one seed is required");
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (std::size_t j = i + 1; j < seeds.size(); ++j)
      if (seeds[i] == seeds[j]) throw std::invalid_argument("seeds: duplicate seed " + std::to_string(seeds[i]));
  if (grid.empty()) throw std::invalid_argument("grid: at least one axis is required");
  auto all = specs();
  for (std::size_t i = 0; i < all.size(); ++i) {
    all[i].validate();
    for (std::size_t j = i + 1; j < all.size(); ++j)
      if (all[i].kind == all[j].kind && all[i].magnitude == all[j].magnitude)
        throw std::invalid_argument("grid: duplicate point " + data::to_string(all[i].kind));
  }
  if (workers == 0) throw std::invalid_argument("workers must be at least 1");
  train_config(seeds.front()).validate();
}

std::vector<data::PerturbationSpec> RunConfig::specs() const {
  std::vector<data::PerturbationSpec> out;
  for (const auto& axis : grid)
    for (double m : axis.magnitudes) out.push_back({axis.kind, m, perturb_seed});
  return out;
}

training::TrainConfig RunConfig::train_config(std::uint64_t seed) const {
  training::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.initial_lr = initial_lr;
  t.arch = arch;
  t.head = head;
  t.head_config = head_config;
  t.width_divisor = width_divisor;
  if (fixed_init) {
    t.seed = *fixed_init;
    t.data_seed = seed;
  } else {
    t.seed = seed;
  }
  return t;
}

std::string RunConfig::model_descriptor() const {
  return nn::to_string(arch) + "/" + nn::to_string(head) + "/" + ablation;
}

json to_json(const RunConfig& c) {
  json grid = json::array();
  for (const auto& a : c.grid) grid.push_back(format_grid_axis(a));
  json j = {{"experiment_id", c.experiment_id},
            {"dataset", to_string(c.dataset)},
            {"data_dir", c.data_dir.string()},
            {"arch", nn::to_string(c.arch)},
            {"head", nn::to_string(c.head)},
            {"ablation", c.ablation},
            {"head_config", head_json(c.head_config)},
            {"grid", grid},
            {"seeds", c.seeds},
            {"train_samples", c.train_samples},
            {"test_samples", c.test_samples},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"initial_lr", c.initial_lr},
            {"width_divisor", c.width_divisor},
            {"perturb_seed", c.perturb_seed},
            {"quadrant_seed", c.quadrant_seed},
            {"use_best_checkpoint", c.use_best_checkpoint},
            {"output_dir", c.output_dir.string()},
            {"workers", c.workers}};
  j["fixed_init"] = c.fixed_init ? json(*c.fixed_init) : json(nullptr);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  c.experiment_id = j.value("experiment_id", c.experiment_id);
  if (j.contains("dataset")) c.dataset = dataset_from_string(j.at("dataset").get<std::string>());
  c.data_dir = j.value("data_dir", std::string());
  if (j.contains("arch")) c.arch = nn::arch_from_string(j.at("arch").get<std::string>());
  if (j.contains("head")) c.head = nn::head_from_string(j.at("head").get<std::string>());
  c.ablation = j.value("ablation", c.ablation);
  if (j.contains("head_config")) c.head_config = head_from(j.at("head_config"));
  if (j.contains("grid")) {
    c.grid.clear();
    for (const auto& a : j.at("grid")) c.grid.push_back(parse_grid_axis(a.get<std::string>()));
  }
  c.seeds = j.value("seeds", c.seeds);
  c.train_samples = j.value("train_samples", c.train_samples);
  c.test_samples = j.value("test_samples", c.test_samples);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.width_divisor = j.value("width_divisor", c.width_divisor);
  c.perturb_seed = j.value("perturb_seed", c.perturb_seed);
  c.quadrant_seed = j.value("quadrant_seed", c.quadrant_seed);
  c.use_best_checkpoint = j.value("use_best_checkpoint", c.use_best_checkpoint);
  c.output_dir = j.value("output_dir", c.output_dir.string());
  c.workers = j.value("workers", c.workers);
  if (j.contains("fixed_init") && !j.at("fixed_init").is_null()) c.fixed_init = j.at("fixed_init").get<std::uint64_t>();
  return c;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& c) {
  json j = training_identity(c);
  j["test_samples"] = c.test_samples;
  j["perturb_seed"] = c.perturb_seed;
  return fnv1a_hex(j.dump());
}

std::string model_hash(const RunConfig& c, std::uint64_t seed) {
  json j = training_identity(c);
  j["seed"] = seed;
  return fnv1a_hex(j.dump());
}

std::vector<AblationVariant> ablation_variants(const consensus::HeadConfig& base, bool factorial) {
  using consensus::Distance;
  std::vector<AblationVariant> out;
  if (!factorial) {
    out.push_back({"full", base});
    auto v = base;
    v.distance = Distance::euclidean;
    out.push_back({"euclidean", v});
    v = base;
    v.distance = Distance::fully_connected;
    out.push_back({"fully_connected", v});
    v = base;
    v.opt_out_prototype = !base.opt_out_prototype;
    out.push_back({base.opt_out_prototype ? "c_prototypes" : "c+1_prototypes", v});
    v = base;
    v.use_nonlinearity = !base.use_nonlinearity;
    out.push_back({base.use_nonlinearity ? "no_h" : "with_h", v});
    return out;
  }
  for (auto d : {Distance::cosine, Distance::euclidean, Distance::fully_connected})
    for (bool opt_out : {true, false})
      for (bool h : {true, false}) {
        auto v = base;
        v.distance = d;
        v.opt_out_prototype = opt_out;
        v.use_nonlinearity = h;
        out.push_back({consensus::to_string(d) + (opt_out ? "_c+1" : "_c") + (h ? "_h" : "_noh"), v});
      }
  return out;
}

}  // namespace dc::experiments
