// Experiment runner: train, sweep, ablate, quadrants, attack, report.

#include <chrono>
#include <ctime>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepconsensus/autodiff/memory.h"
#include "deepconsensus/data/idx.h"
#include "deepconsensus/experiments/config.h"
#include "deepconsensus/experiments/report.h"
#include "deepconsensus/experiments/runner.h"
#include "deepconsensus/training/train.h"

#ifndef DC_DEFAULT_DATA_DIR
#define DC_DEFAULT_DATA_DIR "data/mnist"
#endif

namespace {

using namespace dc;
using namespace dc::experiments;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3 };

void log_line(const std::string& msg) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[16];
  std::strftime(stamp, sizeof stamp, "%H:%M:%S", std::localtime(&now));
  std::cerr << '[' << stamp << "] " << msg << '\n';
}

struct Flags {
  std::string dataset = "mnist";
  std::string arch = "cnn_small";
  std::string head = "consensus";
  std::string distance = "cosine";
  bool no_opt_out = false;
  bool no_h = false;
  bool opt_out_outside_softmax = false;
  std::vector<std::string> grid = {"none:0"};
  std::optional<std::uint64_t> fixed_init;
  std::string data_dir;
  std::string output_dir = "results";
};

void add_run_options(CLI::App& app, RunConfig& c, Flags& f) {
  app.add_option("--id", c.experiment_id, "Experiment id (results file name)")->capture_default_str();
  app.add_option("--dataset", f.dataset, "mnist or quadrants")->capture_default_str();
  app.add_option("--data-dir", f.data_dir, "MNIST IDX directory (default: $DC_DATA_DIR)");
  app.add_option("--arch", f.arch, "cnn_small, cnn or resnet")->capture_default_str();
  app.add_option("--head", f.head, "consensus or fully_connected")->capture_default_str();
  app.add_option("--distance", f.distance, "cosine, euclidean, fully_connected or dot")->capture_default_str();
  app.add_flag("--no-opt-out", f.no_opt_out, "c prototypes per layer instead of c+1");
  app.add_flag("--no-h", f.no_h, "Identity in place of the per-layer transform h");
  app.add_flag("--opt-out-outside-softmax", f.opt_out_outside_softmax,
               "Drop the opt-out logit from the training loss");
  app.add_option("--grid", f.grid, "Perturbation axes, e.g. translate:0,10,20 or blur (default magnitudes)")
      ->capture_default_str();
  app.add_option("--seeds", c.seeds, "Seeds, one model each")->capture_default_str();
  app.add_option("--fixed-init", f.fixed_init, "Shared initialisation seed; --seeds then vary data order only");
  app.add_option("--train-samples", c.train_samples, "Training subset size (0 = all)")->capture_default_str();
  app.add_option("--test-samples", c.test_samples, "Test subset size (0 = all)")->capture_default_str();
  app.add_option("--epochs", c.epochs)->capture_default_str();
  app.add_option("--batch-size", c.batch_size)->capture_default_str();
  app.add_option("--lr", c.initial_lr, "Initial learning rate")->capture_default_str();
  app.add_option("--width-divisor", c.width_divisor, "Shrink every layer width")->capture_default_str();
  app.add_option("--perturb-seed", c.perturb_seed)->capture_default_str();
  app.add_option("--quadrant-seed", c.quadrant_seed)->capture_default_str();
  app.add_flag("--use-best", c.use_best_checkpoint, "Evaluate the best-validation checkpoint");
  app.add_option("--output-dir", f.output_dir, "Results directory")->capture_default_str();
  app.add_option("--workers", c.workers, "Concurrent training runs")->capture_default_str();
}

void resolve(RunConfig& c, const Flags& f) {
  c.dataset = dataset_from_string(f.dataset);
  c.arch = nn::arch_from_string(f.arch);
  c.head = nn::head_from_string(f.head);
  c.head_config.distance = consensus::distance_from_string(f.distance);
  c.head_config.opt_out_prototype = !f.no_opt_out;
  c.head_config.use_nonlinearity = !f.no_h;
  c.head_config.opt_out_in_softmax = !f.opt_out_outside_softmax;
  c.grid.clear();
  for (const auto& g : f.grid) c.grid.push_back(parse_grid_axis(g));
  c.fixed_init = f.fixed_init;
  c.data_dir = f.data_dir.empty() ? data::data_root(DC_DEFAULT_DATA_DIR) : std::filesystem::path(f.data_dir);
  c.output_dir = f.output_dir;
}

void print_rows(const std::vector<ExperimentResult>& rows) {
  for (const auto& r : rows) {
    std::printf("%-36s seed %-3llu %-10s %6g  acc %.4f\n", r.model_descriptor().c_str(),
                static_cast<unsigned long long>(r.seed), data::to_string(r.spec.kind).c_str(), r.spec.magnitude,
                r.accuracy);
  }
}

}  // namespace

int main(int argc, char** argv) {
  dc::tune_allocator();
  CLI::App app{"DeepConsensus experiment runner"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Key = value run configuration file");

  RunConfig config;
  Flags flags;
  add_run_options(app, config, flags);
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the resolved configuration as JSON");

  auto* train_cmd = app.add_subcommand("train", "Train one model per seed and report test accuracy");
  std::string checkpoint_out;
  train_cmd->add_option("--checkpoint", checkpoint_out, "Also copy the first seed's model here");

  auto* sweep_cmd = app.add_subcommand("sweep", "Train per seed and evaluate the perturbation grid");
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep every ablation variant of the consensus head");
  bool factorial = false;
  ablate_cmd->add_flag("--factorial", factorial, "All 12 distance x prototype x h combinations");
  auto* quad_cmd = app.add_subcommand("quadrants", "40-class quadrant task for both heads");
  auto* attack_cmd = app.add_subcommand("attack", "DeepFool perturbation density");
  AttackOptions attack;
  attack_cmd->add_option("--samples", attack.samples, "Test images to attack")->capture_default_str();
  attack_cmd->add_option("--sample-seed", attack.sample_seed)->capture_default_str();
  attack_cmd->add_option("--max-iter", attack.deepfool.max_iter)->capture_default_str();
  attack_cmd->add_option("--overshoot", attack.deepfool.overshoot)->capture_default_str();
  attack_cmd->add_flag("--clip", attack.deepfool.clip, "Keep perturbed pixels in [0, 1]");
  attack_cmd->add_option("--grid-images", attack.grid_images, "Attacks drawn into the PGM grid")->capture_default_str();
  auto* report_cmd = app.add_subcommand("report", "Aggregate result files: mean, std, Welch t");
  std::string results_dir;
  report_cmd->add_option("--results-dir", results_dir, "Directory of result CSVs (default: --output-dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (quad_cmd->parsed()) {
      flags.dataset = "quadrants";
      if (app.count("--arch") == 0) flags.arch = "cnn";
      if (app.count("--id") == 0) config.experiment_id = "quadrants";
      if (app.count("--grid") == 0) flags.grid = {"none:0"};
    }
    resolve(config, flags);
    config.validate();
    if (print_config) std::cout << to_json(config).dump(2) << '\n';

    if (train_cmd->parsed()) {
      const auto data = load_datasets(config);
      for (auto seed : config.seeds) {
        auto model = obtain_model(config, seed, data, log_line);
        auto eval = training::evaluate(model, data.test);
        std::printf("%s seed %llu: test accuracy %.4f\n", config.model_descriptor().c_str(),
                    static_cast<unsigned long long>(seed), eval.accuracy);
      }
      if (!checkpoint_out.empty())
        std::filesystem::copy_file(model_path(config, config.seeds.front()), checkpoint_out,
                                   std::filesystem::copy_options::overwrite_existing);
    } else if (sweep_cmd->parsed()) {
      print_rows(run_sweep(config, log_line));
    } else if (ablate_cmd->parsed()) {
      print_rows(run_ablation(config, factorial, log_line));
    } else if (quad_cmd->parsed()) {
      std::vector<nn::HeadKind> heads{nn::HeadKind::consensus, nn::HeadKind::fully_connected};
      if (app.count("--head") > 0) heads = {config.head};
      std::vector<ExperimentResult> rows;
      for (auto h : heads) {
        RunConfig c = config;
        c.head = h;
        auto part = run_sweep(c, log_line);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      print_rows(rows);
      std::cout << summary_table(aggregate(rows));
    } else if (attack_cmd->parsed()) {
      for (const auto& s : run_attack(config, attack, log_line)) {
        std::printf("%s seed %llu: rho %.4f +- %.4f  (%zu successful, %zu failed, %zu skipped)\n", s.model.c_str(),
                    static_cast<unsigned long long>(s.seed), s.density.mean, s.density.stddev, s.density.successes,
                    s.density.failures, s.density.skipped);
      }
    } else if (report_cmd->parsed()) {
      const auto dir = results_dir.empty() ? config.output_dir : std::filesystem::path(results_dir);
      auto rep = write_report(dir);
      std::cout << summary_table(rep);
      std::cout << "written to " << (dir / "report").string() << '\n';
    }
  } catch (const data::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const training::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kOk;
}
