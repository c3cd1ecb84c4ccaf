#include "deepconsensus/nn/checkpoint.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace dc::nn {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "DCCKPT 1";

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

json head_to_json(const consensus::HeadConfig& c) {
  return {{"distance", consensus::to_string(c.distance)},
          {"opt_out_prototype", c.opt_out_prototype},
          {"use_nonlinearity", c.use_nonlinearity},
          {"layer_weights", c.layer_weights},
          {"opt_out_in_softmax", c.opt_out_in_softmax},
          {"temperature", c.temperature}};
}

consensus::HeadConfig head_from_json(const json& j) {
  consensus::HeadConfig c;
  c.distance = consensus::distance_from_string(j.at("distance").get<std::string>());
  c.opt_out_prototype = j.at("opt_out_prototype").get<bool>();
  c.use_nonlinearity = j.at("use_nonlinearity").get<bool>();
  c.layer_weights = j.at("layer_weights").get<std::vector<double>>();
  c.opt_out_in_softmax = j.at("opt_out_in_softmax").get<bool>();
  c.temperature = j.at("temperature").get<double>();
  return c;
}

json graph_json(const LayerGraph& g) {
  json layers = json::array();
  for (const auto& l : g.layers) {
    layers.push_back({{"kind", to_string(l.kind)},
                      {"kernel", l.kernel},
                      {"in", l.in_channels},
                      {"out", l.out_channels},
                      {"stride", l.stride},
                      {"pool", l.pool}});
  }
  json residuals = json::array();
  for (const auto& r : g.residuals) {
    residuals.push_back({{"source", r.source},
                         {"destination", r.destination},
                         {"projection", r.projection},
                         {"stride", r.stride},
                         {"in", r.in_channels},
                         {"out", r.out_channels}});
  }
  return {{"arch", to_string(g.arch)},
          {"head", to_string(g.head)},
          {"in_channels", g.in_channels},
          {"num_classes", g.num_classes},
          {"input_size", g.options.input_size},
          {"width_divisor", g.options.width_divisor},
          {"head_config", head_to_json(g.options.head_config)},
          {"layers", layers},
          {"residuals", residuals},
          {"tap_points", g.tap_points}};
}

LayerGraph graph_from(const json& j) {
  LayerGraph g;
  g.arch = arch_from_string(j.at("arch").get<std::string>());
  g.head = head_from_string(j.at("head").get<std::string>());
  g.in_channels = j.at("in_channels").get<std::size_t>();
  g.num_classes = j.at("num_classes").get<std::size_t>();
  g.options.input_size = j.at("input_size").get<std::size_t>();
  g.options.width_divisor = j.at("width_divisor").get<std::size_t>();
  g.options.head_config = head_from_json(j.at("head_config"));
  for (const auto& l : j.at("layers")) {
    LayerDesc d;
    d.kind = layer_kind_from_string(l.at("kind").get<std::string>());
    d.kernel = l.at("kernel").get<std::size_t>();
    d.in_channels = l.at("in").get<std::size_t>();
    d.out_channels = l.at("out").get<std::size_t>();
    d.stride = l.at("stride").get<std::size_t>();
    d.pool = l.at("pool").get<std::size_t>();
    g.layers.push_back(d);
  }
  for (const auto& r : j.at("residuals")) {
    ResidualLink link;
    link.source = r.at("source").get<int>();
    link.destination = r.at("destination").get<std::size_t>();
    link.projection = r.at("projection").get<bool>();
    link.stride = r.at("stride").get<std::size_t>();
    link.in_channels = r.at("in").get<std::size_t>();
    link.out_channels = r.at("out").get<std::size_t>();
    g.residuals.push_back(link);
  }
  g.tap_points = j.at("tap_points").get<std::vector<std::size_t>>();
  return g;
}

NamedTensors<float> all_tensors(const Model<float>& m) {
  auto out = m.named_parameters();
  for (auto& kv : m.named_buffers()) out.push_back(std::move(kv));
  return out;
}

}  // namespace

std::string graph_to_json(const LayerGraph& graph) { return graph_json(graph).dump(); }

LayerGraph graph_from_json(const std::string& text) {
  try {
    return graph_from(json::parse(text));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("invalid graph description: ") + e.what());
  }
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  const auto tensors = all_tensors(model);
  json header;
  header["graph"] = graph_json(model.graph());
  header["seed"] = model.seed();
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  header["tensors"] = entries;
  header["payload_floats"] = offset;
  const std::string text = header.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write " + tmp.string());
    f << kMagic << '\n' << text.size() << '\n' << text;
    for (const auto& kv : tensors) {
      for (float v : kv.second.data()) {
        const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(v));
        f.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    }
    if (!f) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string magic, length_line;
  std::getline(f, magic);
  if (magic != kMagic) throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  std::getline(f, length_line);
  std::size_t length = 0;
  try {
    length = std::stoul(length_line);
  } catch (const std::exception&) {
    throw CheckpointError(path.string() + ": bad header length");
  }
  std::string text(length, '\0');
  f.read(text.data(), static_cast<std::streamsize>(length));
  if (static_cast<std::size_t>(f.gcount()) != length) throw CheckpointError(path.string() + ": truncated header");
  const std::streamoff payload_start = f.tellg();

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": header is not valid JSON: " + e.what());
  }
  LayerGraph graph;
  std::uint64_t seed = 0;
  try {
    graph = graph_from(header.at("graph"));
    seed = header.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  Model<float> model(std::move(graph), seed);

  std::map<std::string, Tensor<float>> by_name;
  for (auto& kv : all_tensors(model)) by_name.emplace(kv.first, kv.second);
  if (header.at("tensors").size() != by_name.size()) {
    throw CheckpointError(path.string() + ": tensor count does not match the graph");
  }
  for (const auto& e : header.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError(path.string() + ": unexpected tensor " + name);
    auto& t = it->second;
    if (e.at("shape").get<Shape>() != t.shape()) {
      throw CheckpointError(path.string() + ": shape mismatch for " + name);
    }
    const auto offset = e.at("offset").get<std::size_t>();
    f.seekg(payload_start + static_cast<std::streamoff>(offset * sizeof(float)));
    for (auto& v : t.data()) {
      std::uint32_t bits = 0;
      f.read(reinterpret_cast<char*>(&bits), sizeof bits);
      if (!f) throw CheckpointError(path.string() + ": truncated payload in " + name);
      v = std::bit_cast<float>(to_le(bits));
    }
  }
  return model;
}

}  // namespace dc::nn
