#include "deepconsensus/nn/graph.h"

#include <algorithm>
#include <stdexcept>

#include "deepconsensus/autodiff/tensor.h"

namespace dc::nn {

std::string to_string(Arch a) {
  switch (a) {
    case Arch::cnn_small: return "cnn_small";
    case Arch::cnn: return "cnn";
    case Arch::resnet: return "resnet";
  }
  return "?";
}

std::string to_string(HeadKind h) {
  return h == HeadKind::consensus ? "consensus" : "fully_connected";
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

Arch arch_from_string(const std::string& name) {
  if (name == "cnn_small") return Arch::cnn_small;
  if (name == "cnn") return Arch::cnn;
  if (name == "resnet") return Arch::resnet;
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

HeadKind head_from_string(const std::string& name) {
  if (name == "consensus" || name == "dc") return HeadKind::consensus;
  if (name == "fully_connected" || name == "fc" || name == "base") return HeadKind::fully_connected;
  throw std::invalid_argument("unknown head '" + name + "'");
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::conv, LayerKind::batchnorm, LayerKind::leaky_relu, LayerKind::maxpool,
                 LayerKind::flatten, LayerKind::linear}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + name + "'");
}

namespace {

class GraphBuilder {
 public:
  GraphBuilder(LayerGraph& g, std::size_t channels, std::size_t size)
      : g_(g), channels_(channels), size_(size) {}

  std::size_t last() const { return g_.layers.size() - 1; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return size_; }

  // conv -> batchnorm, the pairing every convolution gets.
  void conv_bn(std::size_t out, std::size_t kernel = 3) {
    g_.layers.push_back({LayerKind::conv, kernel, channels_, out, 1, 0});
    g_.layers.push_back({LayerKind::batchnorm, 0, out, 0, 1, 0});
    channels_ = out;
  }
  void act() { g_.layers.push_back({LayerKind::leaky_relu, 0, channels_, 0, 1, 0}); }
  void conv_bn_act(std::size_t out) {
    conv_bn(out);
    act();
  }
  // Halves the resolution when possible; returns the applied factor.
  std::size_t pool2() {
    if (size_ < 2 || size_ % 2 != 0) return 1;
    pool(2);
    return 2;
  }
  void pool(std::size_t factor) {
    g_.layers.push_back({LayerKind::maxpool, 0, channels_, 0, 1, factor});
    size_ /= factor;
  }
  void fc_stack(std::size_t divisor, std::size_t classes) {
    if (size_ > 2 && size_ % 2 == 0) pool(size_ / 2);
    g_.layers.push_back({LayerKind::flatten, 0, channels_, 0, 1, 0});
    std::size_t features = channels_ * size_ * size_;
    for (std::size_t hidden : {std::size_t{256}, std::size_t{128}}) {
      const std::size_t h = std::max<std::size_t>(1, hidden / divisor);
      g_.layers.push_back({LayerKind::linear, 0, features, h, 1, 0});
      g_.layers.push_back({LayerKind::leaky_relu, 0, h, 0, 1, 0});
      features = h;
    }
    g_.layers.push_back({LayerKind::linear, 0, features, classes, 1, 0});
  }

 private:
  LayerGraph& g_;
  std::size_t channels_;
  std::size_t size_;
};

std::size_t scaled(std::size_t width, std::size_t divisor) {
  return std::max<std::size_t>(1, width / divisor);
}

void build_plain_cnn(LayerGraph& g, GraphBuilder& b, bool wide) {
  const std::size_t d = g.options.width_divisor;
  const std::size_t widths_small[] = {16, 32, 64, 128};
  const std::size_t widths_wide[] = {32, 64, 128, 256};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t w = scaled(wide ? widths_wide[stage] : widths_small[stage], d);
    b.conv_bn_act(w);
    if (wide && stage >= 2) b.conv_bn_act(w);
    b.pool2();
    g.tap_points.push_back(b.last());
  }
}

void build_resnet(LayerGraph& g, GraphBuilder& b) {
  const std::size_t d = g.options.width_divisor;
  b.conv_bn_act(scaled(32, d));
  b.pool2();
  g.tap_points.push_back(b.last());
  for (std::size_t width : {64, 128, 256}) {
    const std::size_t w = scaled(width, d);
    for (int block = 0; block < 2; ++block) {
      const int source = static_cast<int>(b.last());
      const std::size_t in_ch = b.channels();
      const std::size_t factor = block == 0 ? b.pool2() : 1;
      b.conv_bn_act(w);
      b.conv_bn(w);
      ResidualLink link;
      link.source = source;
      link.destination = b.last();
      link.projection = factor != 1 || in_ch != w;
      link.stride = factor;
      link.in_channels = in_ch;
      link.out_channels = w;
      g.residuals.push_back(link);
      b.act();
    }
    g.tap_points.push_back(b.last());
  }
}

}  // namespace

LayerGraph build_graph(Arch arch, HeadKind head, std::size_t in_channels, std::size_t num_classes,
                       const NetworkOptions& options) {
  if (in_channels == 0 || num_classes == 0) {
    throw std::invalid_argument("build_graph: channels and classes must be positive");
  }
  if (options.width_divisor == 0) throw std::invalid_argument("build_graph: width divisor is zero");
  LayerGraph g;
  g.arch = arch;
  g.head = head;
  g.in_channels = in_channels;
  g.num_classes = num_classes;
  g.options = options;
  GraphBuilder b(g, in_channels, options.input_size);
  switch (arch) {
    case Arch::cnn_small: build_plain_cnn(g, b, false); break;
    case Arch::cnn: build_plain_cnn(g, b, true); break;
    case Arch::resnet: build_resnet(g, b); break;
    default: throw std::invalid_argument("build_graph: unknown architecture");
  }
  if (head == HeadKind::fully_connected) b.fc_stack(options.width_divisor, num_classes);
  validate(g);
  return g;
}

std::vector<BlockShape> infer_shapes(const LayerGraph& graph) {
  std::vector<BlockShape> shapes;
  BlockShape cur{graph.in_channels, graph.options.input_size, graph.options.input_size};
  const BlockShape input = cur;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto& l = graph.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::conv:
        if (cur.flat() || cur.channels != l.in_channels || l.kernel % 2 == 0 || l.stride == 0) {
          throw ShapeError(where + ": incompatible input");
        }
        cur = {l.out_channels, (cur.height - 1) / l.stride + 1, (cur.width - 1) / l.stride + 1};
        break;
      case LayerKind::batchnorm:
      case LayerKind::leaky_relu:
        if (cur.channels != l.in_channels) throw ShapeError(where + ": channel mismatch");
        break;
      case LayerKind::maxpool:
        if (cur.flat() || l.pool == 0 || cur.height % l.pool != 0 || cur.width % l.pool != 0) {
          throw ShapeError(where + ": spatial size not divisible by pool factor");
        }
        cur = {cur.channels, cur.height / l.pool, cur.width / l.pool};
        break;
      case LayerKind::flatten:
        cur = {cur.flat() ? cur.channels : cur.channels * cur.height * cur.width, 0, 0};
        break;
      case LayerKind::linear:
        if (!cur.flat() || cur.channels != l.in_channels) throw ShapeError(where + ": feature mismatch");
        cur = {l.out_channels, 0, 0};
        break;
    }
    for (const auto& link : graph.residuals) {
      if (link.destination != i) continue;
      if (link.source >= static_cast<int>(i)) throw ShapeError(where + ": residual source after destination");
      BlockShape src = link.source < 0 ? input : shapes[static_cast<std::size_t>(link.source)];
      if (link.projection) {
        if (src.channels != link.in_channels || link.stride == 0) {
          throw ShapeError(where + ": projection input mismatch");
        }
        src = {link.out_channels, (src.height - 1) / link.stride + 1, (src.width - 1) / link.stride + 1};
      }
      if (!(src == cur)) throw ShapeError(where + ": residual shapes differ");
    }
    shapes.push_back(cur);
  }
  return shapes;
}

void validate(const LayerGraph& graph) {
  if (graph.tap_points.empty()) throw ShapeError("layer graph has no tap points");
  for (std::size_t i = 0; i < graph.tap_points.size(); ++i) {
    if (graph.tap_points[i] >= graph.layers.size()) throw ShapeError("tap point out of range");
    if (i > 0 && graph.tap_points[i] <= graph.tap_points[i - 1]) {
      throw ShapeError("tap points must be strictly increasing");
    }
  }
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    if (graph.layers[i].kind == LayerKind::conv &&
        (i + 1 >= graph.layers.size() || graph.layers[i + 1].kind != LayerKind::batchnorm)) {
      throw ShapeError("convolution at layer " + std::to_string(i) + " is not followed by batch norm");
    }
  }
  const auto shapes = infer_shapes(graph);
  for (auto t : graph.tap_points) {
    if (shapes[t].flat()) throw ShapeError("tap point on a flat layer");
  }
  if (graph.head == HeadKind::fully_connected &&
      (!shapes.back().flat() || shapes.back().channels != graph.num_classes)) {
    throw ShapeError("fully connected head must end in num_classes outputs");
  }
}

std::vector<std::size_t> tap_channels(const LayerGraph& graph) {
  const auto shapes = infer_shapes(graph);
  std::vector<std::size_t> out;
  for (auto t : graph.tap_points) out.push_back(shapes[t].channels);
  return out;
}

}  // namespace dc::nn
