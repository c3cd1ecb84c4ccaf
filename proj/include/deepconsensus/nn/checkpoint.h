#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "deepconsensus/nn/model.h"

namespace dc::nn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Serialises the graph, seed and every parameter and buffer.
///
/// Layout:
///   DCCKPT 1\n
///   <header byte length>\n
///   <JSON header: graph, seed, tensors [{name, shape, offset}]>
///   <float32 little-endian payload>
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);

/// Rebuilds the model described by the header and fills in its tensors.
/// Throws CheckpointError on malformed files or shape disagreement.
Model<float> load_checkpoint(const std::filesystem::path& path);

/// Graph <-> JSON text, used by the checkpoint header and config hashing.
std::string graph_to_json(const LayerGraph& graph);
LayerGraph graph_from_json(const std::string& text);

}  // namespace dc::nn
