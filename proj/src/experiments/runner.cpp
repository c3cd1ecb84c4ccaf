#include "deepconsensus/experiments/runner.h"

#include <atomic>
#include <chrono>
#include <exception>
#include <map>
#include <set>
#include <thread>

#include <json.hpp>

#include "deepconsensus/data/transforms.h"
#include "deepconsensus/nn/checkpoint.h"
#include "deepconsensus/training/train.h"

namespace dc::experiments {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::filesystem::path runs_log(const RunConfig& c) { return c.output_dir / "runs.jsonl"; }

// Training settings with no canonical value; stamped on every training record.
json unreported_defaults(const RunConfig& c) {
  return {{"batch_size", c.batch_size},
          {"initial_lr", c.initial_lr},
          {"plateau_threshold", training::TrainConfig{}.plateau_threshold},
          {"plateau_cooldown", training::TrainConfig{}.plateau_cooldown}};
}

}  // namespace

Datasets load_datasets(const RunConfig& config) {
  const auto dir = config.data_dir.empty() ? data::data_root() : config.data_dir;
  auto train = data::load_mnist(dir, data::Split::train);
  auto test = data::load_mnist(dir, data::Split::test);
  if (config.train_samples > 0) train = data::head(train, config.train_samples);
  if (config.test_samples > 0) test = data::head(test, config.test_samples);
  Datasets d;
  if (config.dataset == DatasetKind::quadrants) {
    d.train = data::make_quadrants(train, config.quadrant_seed);
    d.test = data::make_quadrants(test, data::mix_seed(config.quadrant_seed, 1));
  } else {
    d.train = data::embed_canvas(train);
    d.test = data::embed_canvas(test);
  }
  return d;
}

std::filesystem::path results_path(const RunConfig& config) {
  return config.output_dir / (config.experiment_id + ".csv");
}

std::filesystem::path model_path(const RunConfig& config, std::uint64_t seed) {
  return config.output_dir / "models" / (model_hash(config, seed) + ".ckpt");
}

nn::Model<float> obtain_model(const RunConfig& config, std::uint64_t seed, const Datasets& data, const Logger& log) {
  const auto path = model_path(config, seed);
  if (std::filesystem::exists(path)) {
    say(log, config.model_descriptor() + " seed " + std::to_string(seed) + ": cached " + path.filename().string());
    auto m = nn::load_checkpoint(path);
    m.set_training(false);
    return m;
  }
  std::filesystem::create_directories(path.parent_path());
  const auto tc = config.train_config(seed);
  const auto t0 = Clock::now();
  auto result = training::train(tc, data.train, [&](const training::EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s seed %llu: epoch %zu loss %.4f val %.4f lr %.1e",
                  config.model_descriptor().c_str(), static_cast<unsigned long long>(seed), e.epoch, e.train_loss,
                  e.val_accuracy, e.lr);
    say(log, buf);
  });
  const double elapsed = seconds_since(t0);
  auto& chosen = config.use_best_checkpoint ? result.best_model : result.model;
  nn::save_checkpoint(chosen, path);
  auto log_path = path;
  log_path.replace_extension(".train.jsonl");
  result.log.write_jsonl(log_path);
  json rec = {{"event", "train"},
              {"experiment_id", config.experiment_id},
              {"model", config.model_descriptor()},
              {"seed", seed},
              {"init_seed", tc.seed},
              {"data_seed", tc.effective_data_seed()},
              {"model_hash", model_hash(config, seed)},
              {"epochs", tc.epochs},
              {"best_epoch", result.log.best_epoch},
              {"best_val_accuracy", result.log.best_val_accuracy},
              {"final_val_accuracy", result.log.epochs.back().val_accuracy},
              {"wall_time", elapsed},
              {"unreported_defaults", unreported_defaults(config)}};
  append_line(runs_log(config), rec.dump());
  chosen.set_training(false);
  return std::move(chosen);
}

std::vector<ExperimentResult> run_sweep(const RunConfig& config, const Logger& log) {
  config.validate();
  std::filesystem::create_directories(config.output_dir);
  const auto path = results_path(config);
  const std::string hash = config_hash(config);
  const auto specs = config.specs();

  auto make_row = [&](std::uint64_t seed, const data::PerturbationSpec& spec) {
    ExperimentResult r;
    r.experiment_id = config.experiment_id;
    r.arch = nn::to_string(config.arch);
    r.head = nn::to_string(config.head);
    r.ablation = config.ablation;
    r.seed = seed;
    r.spec = spec;
    r.epochs = config.epochs;
    r.config_hash = hash;
    return r;
  };

  std::map<std::string, ExperimentResult> existing;
  if (std::filesystem::exists(path)) {
    for (auto& row : read_results_csv(path)) {
      if (row.experiment_id == config.experiment_id && row.model_descriptor() == config.model_descriptor() &&
          row.config_hash != hash) {
        throw std::runtime_error(path.string() + " holds " + row.model_descriptor() + " rows from config " +
                                 row.config_hash + " but this config hashes to " + hash +
                                 "; use a new experiment id or output directory");
      }
      row.spec.seed = config.perturb_seed;
      existing.emplace(row.key(), row);
    }
  }

  const std::size_t per_seed = specs.size();
  std::vector<ExperimentResult> rows;
  std::vector<bool> done;
  for (auto seed : config.seeds)
    for (const auto& spec : specs) {
      auto r = make_row(seed, spec);
      auto it = existing.find(r.key());
      done.push_back(it != existing.end());
      rows.push_back(it != existing.end() ? it->second : r);
    }

  std::vector<std::size_t> todo_seeds;
  for (std::size_t s = 0; s < config.seeds.size(); ++s)
    for (std::size_t g = 0; g < per_seed; ++g)
      if (!done[s * per_seed + g]) {
        todo_seeds.push_back(s);
        break;
      }
  if (todo_seeds.empty()) {
    say(log, config.experiment_id + " " + config.model_descriptor() + ": all " + std::to_string(rows.size()) +
                 " rows present");
    return rows;
  }

  const Datasets data = load_datasets(config);
  OrderedAppender appender(path, done);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(config.workers);

  auto worker = [&](std::size_t w) {
    try {
      for (std::size_t t = next++; t < todo_seeds.size(); t = next++) {
        const std::size_t s = todo_seeds[t];
        const auto seed = config.seeds[s];
        auto model = obtain_model(config, seed, data, log);
        for (std::size_t g = 0; g < per_seed; ++g) {
          const std::size_t index = s * per_seed + g;
          if (done[index]) continue;
          const auto t0 = Clock::now();
          auto eval = training::evaluate(model, data.test, specs[g]);
          auto& r = rows[index];
          r.accuracy = eval.accuracy;
          r.layer_accuracies = eval.layer_accuracies;
          r.wall_time = seconds_since(t0);
          appender.submit(index, r);
          json rec = {{"event", "eval"},          {"experiment_id", r.experiment_id},
                      {"model", r.model_descriptor()}, {"seed", seed},
                      {"perturb_kind", data::to_string(r.spec.kind)}, {"magnitude", r.spec.magnitude},
                      {"accuracy", r.accuracy},   {"wall_time", r.wall_time},
                      {"config_hash", hash}};
          append_line(runs_log(config), rec.dump());
          say(log, r.model_descriptor() + " seed " + std::to_string(seed) + " " + data::to_string(r.spec.kind) +
                       " " + format_double(r.spec.magnitude) + ": " + format_double(r.accuracy));
        }
      }
    } catch (...) {
      errors[w] = std::current_exception();
      next = todo_seeds.size();
    }
  };

  const std::size_t n_threads = std::min(config.workers, todo_seeds.size());
  if (n_threads <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

std::vector<ExperimentResult> run_ablation(const RunConfig& config, bool factorial, const Logger& log) {
  if (config.head != nn::HeadKind::consensus)
    throw std::invalid_argument("ablations apply to the consensus head");
  std::vector<ExperimentResult> all;
  for (const auto& v : ablation_variants(config.head_config, factorial)) {
    RunConfig c = config;
    c.head_config = v.head_config;
    c.ablation = v.name;
    auto rows = run_sweep(c, log);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  return all;
}

namespace {

json attack_record(const adversarial::AttackResult& a, std::size_t index) {
  return {{"index", index},
          {"original_class", a.original_class},
          {"adversarial_class", a.adversarial_class},
          {"iterations", a.iterations},
          {"success", a.success},
          {"x_norm", adversarial::l2_norm(a.original)},
          {"r_norm", adversarial::l2_norm(a.perturbation)},
          {"shape", a.perturbation.shape()},
          {"perturbation", std::vector<float>(a.perturbation.data().begin(), a.perturbation.data().end())}};
}

}  // namespace

std::vector<AttackSummary> run_attack(const RunConfig& config, const AttackOptions& options, const Logger& log) {
  config.validate();
  std::filesystem::create_directories(config.output_dir);
  const Datasets data = load_datasets(config);
  const std::string hash = config_hash(config);
  const auto summary_path = config.output_dir / "attacks.csv";
  if (!std::filesystem::exists(summary_path))
    append_line(summary_path,
                "experiment_id,arch,head,ablation,seed,samples,successes,failures,skipped,rho_mean,rho_std,config_hash");

  std::vector<AttackSummary> out;
  for (auto seed : config.seeds) {
    auto model = obtain_model(config, seed, data, log);
    const auto t0 = Clock::now();
    adversarial::DensityResult density;
    {
      adversarial::ModelClassifier f(model);
      density = adversarial::perturbation_density(f, data.test, options.samples, options.sample_seed,
                                                  options.deepfool, true);
    }
    const std::string stem = config.experiment_id + "-" + nn::to_string(config.arch) + "-" +
                             nn::to_string(config.head) + "-" + config.ablation + "-seed" + std::to_string(seed);
    const auto records = config.output_dir / (stem + "-attacks.jsonl");
    std::filesystem::remove(records);
    std::vector<adversarial::AttackResult> shown;
    for (std::size_t i = 0; i < density.attacks.size(); ++i) {
      append_line(records, attack_record(density.attacks[i], density.indices[i]).dump());
      if (density.attacks[i].success && shown.size() < options.grid_images) shown.push_back(density.attacks[i]);
    }
    if (!shown.empty() && data.test.channels() == 1)
      adversarial::write_pgm_grid(config.output_dir / (stem + ".pgm"), shown);

    std::string line = config.experiment_id + "," + nn::to_string(config.arch) + "," + nn::to_string(config.head) +
                       "," + config.ablation + "," + std::to_string(seed) + "," + std::to_string(density.attempted) +
                       "," + std::to_string(density.successes) + "," + std::to_string(density.failures) + "," +
                       std::to_string(density.skipped) + "," + format_double(density.mean) + "," +
                       format_double(density.stddev) + "," + hash;
    append_line(summary_path, line);
    json rec = {{"event", "attack"},       {"experiment_id", config.experiment_id},
                {"model", config.model_descriptor()}, {"seed", seed},
                {"rho_mean", density.mean}, {"successes", density.successes},
                {"failures", density.failures}, {"wall_time", seconds_since(t0)}};
    append_line(runs_log(config), rec.dump());
    say(log, config.model_descriptor() + " seed " + std::to_string(seed) + ": rho " + format_double(density.mean) +
                 " over " + std::to_string(density.successes) + " successful attacks (" +
                 std::to_string(density.failures) + " failed)");
    density.attacks.clear();
    out.push_back({config.experiment_id, config.model_descriptor(), seed, hash, std::move(density)});
  }
  return out;
}

}  // namespace dc::experiments
