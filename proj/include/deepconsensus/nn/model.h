#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "deepconsensus/autodiff/tensor.h"
#include "deepconsensus/consensus/head.h"
#include "deepconsensus/nn/graph.h"
#include "deepconsensus/nn/layers.h"

namespace dc::nn {

template <typename T>
struct ModelOutput {
  /// [N, output_size()]
  Tensor<T> logits;
  /// Consensus heads only: w_l * D_l(S_l(x_l)) per tap.
  std::vector<Tensor<T>> per_layer;
  /// Tap block outputs, in tap order.
  std::vector<Tensor<T>> taps;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// A backbone built from a LayerGraph plus either the fc stack (already part
/// of the graph) or a consensus head over the tap layers.
template <typename T>
class Model {
 public:
  /// Draws every weight from N(0, init_std) with a generator seeded by `seed`.
  /// Biases and batch-norm shifts start at 0, batch-norm scales at 1.
  Model(LayerGraph graph, std::uint64_t seed, double init_std = 0.02);

  /// x: [N, in_channels, input_size, input_size]
  ModelOutput<T> forward(const Tensor<T>& x);

  void set_training(bool training);
  bool training() const { return training_; }

  const LayerGraph& graph() const { return graph_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t num_classes() const { return graph_.num_classes; }
  std::size_t output_size() const;
  bool is_consensus() const { return graph_.head == HeadKind::consensus; }
  const consensus::ConsensusHead<T>& head() const { return head_; }
  consensus::ConsensusHead<T>& head() { return head_; }

  /// Learnable tensors with stable names, in a fixed order.
  NamedTensors<T> named_parameters() const;
  /// Batch-norm running statistics.
  NamedTensors<T> named_buffers() const;
  std::vector<Tensor<T>> parameters() const;
  std::size_t parameter_count() const;
  void set_requires_grad(bool value);

  /// Deep copy sharing no storage with this model.
  Model clone() const;

 private:
  struct LayerParams {
    Tensor<T> weight;
    Tensor<T> bias;
    std::unique_ptr<BatchNormState<T>> bn;
  };
  struct Shortcut {
    Tensor<T> weight;
    Tensor<T> bias;
    std::unique_ptr<BatchNormState<T>> bn;
  };

  Model() = default;
  Tensor<T> apply_shortcut(std::size_t index, const Tensor<T>& source);

  LayerGraph graph_;
  std::uint64_t seed_ = 0;
  bool training_ = true;
  std::vector<LayerParams> layers_;
  std::vector<Shortcut> shortcuts_;
  consensus::ConsensusHead<T> head_;
  std::vector<bool> keep_output_;
};

/// Index of the largest of the first `classes` entries of row `row`.
template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row, std::size_t classes);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace dc::nn
