#include "deepconsensus/consensus/head.h"

#include <stdexcept>

#include "deepconsensus/autodiff/ops.h"
#include "deepconsensus/consensus/distance.h"
#include "deepconsensus/nn/layers.h"

namespace dc::consensus {

std::string to_string(Distance d) {
  switch (d) {
    case Distance::cosine: return "cosine";
    case Distance::euclidean: return "euclidean";
    case Distance::fully_connected: return "fully_connected";
    case Distance::dot: return "dot";
  }
  return "?";
}

Distance distance_from_string(const std::string& name) {
  if (name == "cosine") return Distance::cosine;
  if (name == "euclidean") return Distance::euclidean;
  if (name == "fully_connected" || name == "fc") return Distance::fully_connected;
  if (name == "dot") return Distance::dot;
  throw std::invalid_argument("unknown distance '" + name + "'");
}

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor<T> t(std::move(shape), T(0), true);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace

template <typename T>
PrototypeBank<T> make_bank(std::size_t channels, std::size_t prototype_count,
                           std::mt19937_64& rng, double init_std) {
  PrototypeBank<T> bank;
  bank.channels = channels;
  bank.h_weight = normal_tensor<T>({channels, channels}, rng, init_std);
  bank.h_bias = Tensor<T>(Shape{channels}, T(0), true);
  bank.prototypes = normal_tensor<T>({prototype_count, channels}, rng, init_std);
  bank.fc_bias = Tensor<T>(Shape{prototype_count}, T(0), true);
  return bank;
}

template <typename T>
Tensor<T> summarize(const Tensor<T>& x, const PrototypeBank<T>& bank, const HeadConfig& config) {
  if (x.rank() != 4 || x.dim(1) != bank.channels) {
    throw ShapeError("summarize: block " + shape_str(x.shape()) + " does not have " +
                     std::to_string(bank.channels) + " channels");
  }
  if (!config.use_nonlinearity) return nn::spatial_sum(x);
  const std::size_t C = bank.channels;
  // h applied to every channel vector is a 1x1 convolution with the square matrix.
  auto w = reshape(bank.h_weight, Shape{C, C, 1, 1});
  return nn::spatial_sum(nn::leaky_relu(nn::conv2d(x, w, bank.h_bias)));
}

template <typename T>
Tensor<T> align(const Tensor<T>& summary, const PrototypeBank<T>& bank, const HeadConfig& config) {
  if (summary.rank() != 2 || summary.dim(1) != bank.prototypes.dim(1)) {
    throw ShapeError("align: summary " + shape_str(summary.shape()) + " vs prototypes " +
                     shape_str(bank.prototypes.shape()));
  }
  Tensor<T> scores;
  switch (config.distance) {
    case Distance::cosine: scores = cosine_similarity(summary, bank.prototypes); break;
    case Distance::euclidean: scores = neg_euclidean_distance(summary, bank.prototypes); break;
    case Distance::fully_connected: scores = nn::linear(summary, bank.prototypes, bank.fc_bias); break;
    case Distance::dot: scores = matmul(summary, transpose(bank.prototypes)); break;
  }
  if (config.temperature != 1.0) scores = scale(scores, static_cast<T>(1.0 / config.temperature));
  return scores;
}

template <typename T>
std::vector<Tensor<T>> per_layer_prediction(const std::vector<Tensor<T>>& taps,
                                            const std::vector<PrototypeBank<T>>& banks,
                                            const HeadConfig& config) {
  if (taps.size() != banks.size()) {
    throw std::invalid_argument("consensus: " + std::to_string(taps.size()) + " tap outputs for " +
                                std::to_string(banks.size()) + " prototype banks");
  }
  std::vector<Tensor<T>> out;
  out.reserve(taps.size());
  for (std::size_t l = 0; l < taps.size(); ++l) {
    auto scores = align(summarize(taps[l], banks[l], config), banks[l], config);
    out.push_back(scale(scores, static_cast<T>(banks[l].layer_weight)));
  }
  return out;
}

template <typename T>
Tensor<T> consensus_forward(const std::vector<Tensor<T>>& taps,
                            const std::vector<PrototypeBank<T>>& banks, const HeadConfig& config) {
  auto layers = per_layer_prediction(taps, banks, config);
  if (layers.empty()) throw std::invalid_argument("consensus: no tap layers");
  Tensor<T> total = layers.front();
  for (std::size_t l = 1; l < layers.size(); ++l) total = add(total, layers[l]);
  return total;
}

template <typename T>
ConsensusHead<T>::ConsensusHead(const std::vector<std::size_t>& tap_channels,
                                std::size_t num_classes, HeadConfig config, std::mt19937_64& rng,
                                double init_std)
    : config_(std::move(config)), num_classes_(num_classes) {
  if (tap_channels.empty()) throw std::invalid_argument("consensus head needs at least one tap");
  if (!config_.layer_weights.empty() && config_.layer_weights.size() != tap_channels.size()) {
    throw std::invalid_argument("consensus head: layer weight count does not match tap count");
  }
  for (double w : config_.layer_weights) {
    if (w < 0.0) throw std::invalid_argument("consensus head: layer weights must be non-negative");
  }
  for (std::size_t l = 0; l < tap_channels.size(); ++l) {
    banks_.push_back(make_bank<T>(tap_channels[l], output_size(), rng, init_std));
    banks_.back().layer_weight = config_.layer_weights.empty() ? 1.0 : config_.layer_weights[l];
  }
}

template <typename T>
HeadOutput<T> ConsensusHead<T>::forward(const std::vector<Tensor<T>>& taps) const {
  HeadOutput<T> out;
  out.per_layer = per_layer_prediction(taps, banks_, config_);
  out.logits = out.per_layer.front();
  for (std::size_t l = 1; l < out.per_layer.size(); ++l) out.logits = add(out.logits, out.per_layer[l]);
  return out;
}

template <typename T>
std::size_t ConsensusHead<T>::output_size() const {
  return num_classes_ + (config_.opt_out_prototype ? 1 : 0);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ConsensusHead<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (std::size_t l = 0; l < banks_.size(); ++l) {
    const std::string p = "head." + std::to_string(l) + ".";
    if (config_.use_nonlinearity) {
      out.emplace_back(p + "h_weight", banks_[l].h_weight);
      out.emplace_back(p + "h_bias", banks_[l].h_bias);
    }
    out.emplace_back(p + "prototypes", banks_[l].prototypes);
    if (config_.distance == Distance::fully_connected) out.emplace_back(p + "fc_bias", banks_[l].fc_bias);
  }
  return out;
}

#define DC_INSTANTIATE_HEAD(T)                                                                  \
  template PrototypeBank<T> make_bank<T>(std::size_t, std::size_t, std::mt19937_64&, double);   \
  template Tensor<T> summarize<T>(const Tensor<T>&, const PrototypeBank<T>&, const HeadConfig&); \
  template Tensor<T> align<T>(const Tensor<T>&, const PrototypeBank<T>&, const HeadConfig&);     \
  template std::vector<Tensor<T>> per_layer_prediction<T>(                                      \
      const std::vector<Tensor<T>>&, const std::vector<PrototypeBank<T>>&, const HeadConfig&);  \
  template Tensor<T> consensus_forward<T>(const std::vector<Tensor<T>>&,                         \
                                          const std::vector<PrototypeBank<T>>&,                 \
                                          const HeadConfig&);                                   \
  template class ConsensusHead<T>;

DC_INSTANTIATE_HEAD(float)
DC_INSTANTIATE_HEAD(double)

}  // namespace dc::consensus
