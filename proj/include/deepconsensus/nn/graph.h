#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "deepconsensus/consensus/head.h"

namespace dc::nn {

enum class Arch { cnn_small, cnn, resnet };
enum class HeadKind { fully_connected, consensus };
enum class LayerKind { conv, batchnorm, leaky_relu, maxpool, flatten, linear };

std::string to_string(Arch a);
std::string to_string(HeadKind h);
std::string to_string(LayerKind k);
/// Throws std::invalid_argument for unknown names.
Arch arch_from_string(const std::string& name);
HeadKind head_from_string(const std::string& name);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerDesc {
  LayerKind kind = LayerKind::conv;
  std::size_t kernel = 0;        // conv
  std::size_t in_channels = 0;   // conv, batchnorm, linear (features)
  std::size_t out_channels = 0;  // conv, linear
  std::size_t stride = 1;        // conv
  std::size_t pool = 0;          // maxpool factor

  bool operator==(const LayerDesc&) const = default;
};

/// Shortcut from the output of `source` (-1: the network input) added to the
/// output of `destination`. With `projection` the shortcut passes through a
/// 1x1 convolution of the given stride followed by batch norm.
struct ResidualLink {
  int source = -1;
  std::size_t destination = 0;
  bool projection = false;
  std::size_t stride = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;

  bool operator==(const ResidualLink&) const = default;
};

struct NetworkOptions {
  std::size_t input_size = 64;
  /// Divides every channel and hidden width; used for miniature networks.
  std::size_t width_divisor = 1;
  consensus::HeadConfig head_config{};
};

struct LayerGraph {
  Arch arch = Arch::cnn_small;
  HeadKind head = HeadKind::consensus;
  std::size_t in_channels = 1;
  std::size_t num_classes = 10;
  NetworkOptions options;
  std::vector<LayerDesc> layers;
  std::vector<ResidualLink> residuals;
  std::vector<std::size_t> tap_points;
};

/// Output block of a layer: channels x height x width, or a flat feature
/// vector (height == width == 0).
struct BlockShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool flat() const { return height == 0; }
  bool operator==(const BlockShape&) const = default;
};

/// Builds one of the three backbones with the requested head.
LayerGraph build_graph(Arch arch, HeadKind head, std::size_t in_channels, std::size_t num_classes,
                       const NetworkOptions& options = {});

/// Per-layer output shapes; throws ShapeError when the graph is inconsistent.
std::vector<BlockShape> infer_shapes(const LayerGraph& graph);

/// Checks tap ordering, residual compatibility and layer wiring.
void validate(const LayerGraph& graph);

/// Channel counts of the tap layers, in tap order.
std::vector<std::size_t> tap_channels(const LayerGraph& graph);

}  // namespace dc::nn
