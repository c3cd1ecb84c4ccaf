#include "deepconsensus/training/train.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "deepconsensus/autodiff/adam.h"
#include "deepconsensus/autodiff/tape.h"
#include "deepconsensus/data/batches.h"
#include "deepconsensus/nn/layers.h"

namespace dc::training {

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(initial_lr > 0)) throw std::invalid_argument("learning rate must be positive");
  if (!(val_fraction > 0 && val_fraction < 1)) throw std::invalid_argument("val_fraction must lie in (0, 1)");
  if (!(plateau_factor > 0 && plateau_factor < 1)) throw std::invalid_argument("plateau factor must lie in (0, 1)");
  if (plateau_patience == 0) throw std::invalid_argument("plateau patience must be at least 1");
  if (width_divisor == 0) throw std::invalid_argument("width divisor must be positive");
}

SplitIndices split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0 && val_fraction < 1)) throw std::invalid_argument("val_fraction must lie in (0, 1)");
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) {
    throw std::invalid_argument("split of " + std::to_string(n) + " samples leaves an empty partition");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitIndices s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

std::pair<data::ImageSet, data::ImageSet> split(const data::ImageSet& set, double val_fraction,
                                                std::uint64_t seed) {
  auto idx = split_indices(set.size(), val_fraction, seed);
  return {data::subset(set, idx.train), data::subset(set, idx.val)};
}

PlateauScheduler::PlateauScheduler(double lr, double factor, std::size_t patience, double threshold,
                                   std::size_t cooldown)
    : lr_(lr), factor_(factor), patience_(patience), threshold_(threshold), cooldown_(cooldown) {}

double PlateauScheduler::step(double score) {
  if (!has_best_ || score > best_ + threshold_) {
    has_best_ = true;
    best_ = score;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
  }
  if (cooldown_left_ > 0) {
    --cooldown_left_;
    bad_epochs_ = 0;
  }
  if (bad_epochs_ >= patience_) {
    lr_ *= factor_;
    ++reductions_;
    bad_epochs_ = 0;
    cooldown_left_ = cooldown_;
  }
  return lr_;
}

std::string TrainLog::to_jsonl() const {
  std::ostringstream out;
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy},
                        {"lr", e.lr}};
    out << j.dump() << '\n';
  }
  return out.str();
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << to_jsonl();
}

EvalResult evaluate(nn::Model<float>& model, const data::ImageSet& set, const data::PerturbationSpec& spec,
                    std::size_t batch_size) {
  const data::ImageSet perturbed = spec.is_identity() ? data::ImageSet{} : data::apply(set, spec);
  const data::ImageSet& source = spec.is_identity() ? set : perturbed;
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard guard;
  const std::size_t c = model.num_classes();
  std::size_t correct = 0;
  std::vector<std::size_t> layer_correct;
  for (std::size_t begin = 0; begin < source.size(); begin += batch_size) {
    const std::size_t end = std::min(source.size(), begin + batch_size);
    auto batch = data::make_batch(source, begin, end);
    auto out = model.forward(batch.x);
    layer_correct.resize(out.per_layer.size(), 0);
    for (std::size_t i = 0; i < batch.y.size(); ++i) {
      const auto y = static_cast<std::size_t>(batch.y[i]);
      if (nn::argmax_row(out.logits, i, c) == y) ++correct;
      for (std::size_t l = 0; l < out.per_layer.size(); ++l)
        if (nn::argmax_row(out.per_layer[l], i, c) == y) ++layer_correct[l];
    }
  }
  model.set_training(was_training);
  EvalResult r;
  r.samples = source.size();
  if (r.samples == 0) return r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.samples);
  for (auto lc : layer_correct) r.layer_accuracies.push_back(static_cast<double>(lc) / static_cast<double>(r.samples));
  return r;
}

nn::LayerGraph graph_for(const TrainConfig& config, std::size_t in_channels, std::size_t num_classes,
                         std::size_t input_size) {
  nn::NetworkOptions opt;
  opt.input_size = input_size;
  opt.width_divisor = config.width_divisor;
  opt.head_config = config.head_config;
  return nn::build_graph(config.arch, config.head, in_channels, num_classes, opt);
}

TrainResult train(const TrainConfig& config, const data::ImageSet& dataset, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.height() != dataset.width()) throw std::invalid_argument("train: images must be square");
  auto [train_set, val_set] = split(dataset, config.val_fraction, config.effective_data_seed());

  nn::Model<float> model(graph_for(config, dataset.channels(), dataset.num_classes, dataset.height()),
                         config.seed);
  const std::size_t c = model.num_classes();
  const bool drop_opt_out = model.is_consensus() && model.output_size() > c &&
                            !config.head_config.opt_out_in_softmax;
  Adam<float> opt(model.parameters(), {.lr = config.initial_lr});
  PlateauScheduler scheduler(config.initial_lr, config.plateau_factor, config.plateau_patience,
                             config.plateau_threshold, config.plateau_cooldown);
  data::BatchStream stream(train_set, config.batch_size, data::mix_seed(config.effective_data_seed(), 1));

  TrainLog log;
  std::optional<nn::Model<float>> best;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    model.set_training(true);
    if (epoch > 1) stream.reset();
    double loss_sum = 0;
    std::size_t seen = 0, batch_index = 0;
    data::Batch batch;
    while (stream.next(batch)) {
      auto logits = model.forward(batch.x).logits;
      if (drop_opt_out) logits = nn::slice_columns(logits, c);
      auto loss = nn::softmax_cross_entropy(logits, batch.y);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        Tape::current().clear();
        throw DivergenceError("training diverged: loss " + std::to_string(value) + " at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batch_index) +
                              " (lr " + std::to_string(opt.lr()) + ")");
      }
      backward(loss);
      opt.step();
      loss_sum += value * static_cast<double>(batch.y.size());
      seen += batch.y.size();
      ++batch_index;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.lr = opt.lr();
    rec.val_accuracy = evaluate(model, val_set).accuracy;
    log.epochs.push_back(rec);
    if (!best || rec.val_accuracy > log.best_val_accuracy) {
      log.best_val_accuracy = rec.val_accuracy;
      log.best_epoch = epoch;
      best = model.clone();
    }
    opt.set_lr(scheduler.step(rec.val_accuracy));
    if (on_epoch) on_epoch(rec);
  }
  model.set_training(false);
  best->set_training(false);
  return {std::move(model), std::move(*best), std::move(log)};
}

}  // namespace dc::training
