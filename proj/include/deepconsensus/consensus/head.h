#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "deepconsensus/autodiff/tensor.h"

namespace dc::consensus {

/// How a layer summary is scored against the class prototypes.
enum class Distance {
  cosine,           // default
  euclidean,        // -|s - p|
  fully_connected,  // linear layer in place of prototypes
  dot,              // plain inner product; the conventional-network special case
};

std::string to_string(Distance d);
Distance distance_from_string(const std::string& name);

struct HeadConfig {
  Distance distance = Distance::cosine;
  /// c+1 prototypes per layer when set; the extra one lets a layer opt out.
  bool opt_out_prototype = true;
  /// h = leaky_relu(linear(.)) when set, identity otherwise.
  bool use_nonlinearity = true;
  /// Per-tap weights w_l; empty means all ones.
  std::vector<double> layer_weights;
  /// Whether the opt-out logit takes part in the training softmax.
  bool opt_out_in_softmax = true;
  /// Divides the scores of every layer; 1 disables it.
  double temperature = 1.0;

  bool operator==(const HeadConfig&) const = default;
};

/// Learnable state of one tap layer.
template <typename T>
struct PrototypeBank {
  std::size_t channels = 0;
  Tensor<T> h_weight;    // [C, C]
  Tensor<T> h_bias;      // [C]
  Tensor<T> prototypes;  // [K, C]; weight matrix under Distance::fully_connected
  Tensor<T> fc_bias;     // [K]; Distance::fully_connected only
  double layer_weight = 1.0;

  std::size_t prototype_count() const { return prototypes.dim(0); }
};

/// Creates a bank with every weight drawn from N(0, init_std) and zero biases.
template <typename T>
PrototypeBank<T> make_bank(std::size_t channels, std::size_t prototype_count,
                           std::mt19937_64& rng, double init_std = 0.02);

/// sum_{i,j} h(x[:, :, i, j]) -> [N, C]
template <typename T>
Tensor<T> summarize(const Tensor<T>& x, const PrototypeBank<T>& bank, const HeadConfig& config);

/// Per-prototype scores of a summary -> [N, K]
template <typename T>
Tensor<T> align(const Tensor<T>& summary, const PrototypeBank<T>& bank, const HeadConfig& config);

/// w_l * align(summarize(x_l)) for every tap, in tap order.
template <typename T>
std::vector<Tensor<T>> per_layer_prediction(const std::vector<Tensor<T>>& taps,
                                            const std::vector<PrototypeBank<T>>& banks,
                                            const HeadConfig& config);

/// Sum of per_layer_prediction in tap order.
template <typename T>
Tensor<T> consensus_forward(const std::vector<Tensor<T>>& taps,
                            const std::vector<PrototypeBank<T>>& banks, const HeadConfig& config);

template <typename T>
struct HeadOutput {
  Tensor<T> logits;
  std::vector<Tensor<T>> per_layer;
};

/// The consensus classifier attached to a backbone's tap layers.
template <typename T>
class ConsensusHead {
 public:
  ConsensusHead() = default;
  ConsensusHead(const std::vector<std::size_t>& tap_channels, std::size_t num_classes,
                HeadConfig config, std::mt19937_64& rng, double init_std = 0.02);

  HeadOutput<T> forward(const std::vector<Tensor<T>>& taps) const;

  /// Output width: num_classes, plus one with the opt-out prototype.
  std::size_t output_size() const;
  std::size_t num_classes() const { return num_classes_; }
  const HeadConfig& config() const { return config_; }
  std::vector<PrototypeBank<T>>& banks() { return banks_; }
  const std::vector<PrototypeBank<T>>& banks() const { return banks_; }

  /// Parameters used under the current configuration, with stable names.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;

 private:
  std::vector<PrototypeBank<T>> banks_;
  HeadConfig config_;
  std::size_t num_classes_ = 0;
};

extern template class ConsensusHead<float>;
extern template class ConsensusHead<double>;

}  // namespace dc::consensus
