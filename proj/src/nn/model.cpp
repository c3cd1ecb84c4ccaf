#include "deepconsensus/nn/model.h"

#include <random>
#include <stdexcept>

#include "deepconsensus/autodiff/ops.h"

namespace dc::nn {

namespace {

template <typename T>
Tensor<T> normal(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor<T> t(std::move(shape), T(0), true);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> copy_param(const Tensor<T>& t) {
  if (!t.defined()) return t;
  auto c = t.clone();
  c.set_requires_grad(t.requires_grad());
  return c;
}

template <typename T>
std::unique_ptr<BatchNormState<T>> copy_bn(const BatchNormState<T>& s) {
  auto out = std::make_unique<BatchNormState<T>>(s.channels());
  out->gamma = copy_param(s.gamma);
  out->beta = copy_param(s.beta);
  out->running_mean = s.running_mean.clone();
  out->running_var = s.running_var.clone();
  out->momentum = s.momentum;
  out->eps = s.eps;
  out->training = s.training;
  return out;
}

}  // namespace

template <typename T>
Model<T>::Model(LayerGraph graph, std::uint64_t seed, double init_std)
    : graph_(std::move(graph)), seed_(seed) {
  validate(graph_);
  std::mt19937_64 rng(seed);
  layers_.resize(graph_.layers.size());
  for (std::size_t i = 0; i < graph_.layers.size(); ++i) {
    const auto& d = graph_.layers[i];
    auto& p = layers_[i];
    switch (d.kind) {
      case LayerKind::conv:
        p.weight = normal<T>({d.out_channels, d.in_channels, d.kernel, d.kernel}, rng, init_std);
        p.bias = Tensor<T>(Shape{d.out_channels}, T(0), true);
        break;
      case LayerKind::linear:
        p.weight = normal<T>({d.out_channels, d.in_channels}, rng, init_std);
        p.bias = Tensor<T>(Shape{d.out_channels}, T(0), true);
        break;
      case LayerKind::batchnorm:
        p.bn = std::make_unique<BatchNormState<T>>(d.in_channels);
        break;
      default:
        break;
    }
  }
  for (const auto& link : graph_.residuals) {
    Shortcut s;
    if (link.projection) {
      s.weight = normal<T>({link.out_channels, link.in_channels, 1, 1}, rng, init_std);
      s.bias = Tensor<T>(Shape{link.out_channels}, T(0), true);
      s.bn = std::make_unique<BatchNormState<T>>(link.out_channels);
    }
    shortcuts_.push_back(std::move(s));
  }
  if (is_consensus()) {
    head_ = consensus::ConsensusHead<T>(tap_channels(graph_), graph_.num_classes,
                                        graph_.options.head_config, rng, init_std);
  }
  keep_output_.assign(graph_.layers.size(), false);
  for (const auto& link : graph_.residuals) {
    if (link.source >= 0) keep_output_[static_cast<std::size_t>(link.source)] = true;
  }
}

template <typename T>
std::size_t Model<T>::output_size() const {
  return is_consensus() ? head_.output_size() : graph_.num_classes;
}

template <typename T>
void Model<T>::set_training(bool training) {
  training_ = training;
  for (auto& p : layers_)
    if (p.bn) p.bn->training = training;
  for (auto& s : shortcuts_)
    if (s.bn) s.bn->training = training;
}

template <typename T>
Tensor<T> Model<T>::apply_shortcut(std::size_t index, const Tensor<T>& source) {
  const auto& link = graph_.residuals[index];
  auto& s = shortcuts_[index];
  if (!link.projection) return source;
  return batchnorm(conv2d(source, s.weight, s.bias, link.stride), *s.bn);
}

template <typename T>
ModelOutput<T> Model<T>::forward(const Tensor<T>& x) {
  const std::size_t size = graph_.options.input_size;
  if (x.rank() != 4 || x.dim(1) != graph_.in_channels || x.dim(2) != size || x.dim(3) != size) {
    throw ShapeError("model input " + shape_str(x.shape()) + " does not match [N," +
                     std::to_string(graph_.in_channels) + "," + std::to_string(size) + "," +
                     std::to_string(size) + "]");
  }
  ModelOutput<T> out;
  std::vector<Tensor<T>> kept(graph_.layers.size());
  std::size_t next_tap = 0;
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < graph_.layers.size(); ++i) {
    const auto& d = graph_.layers[i];
    auto& p = layers_[i];
    switch (d.kind) {
      case LayerKind::conv: cur = conv2d(cur, p.weight, p.bias, d.stride); break;
      case LayerKind::batchnorm: cur = batchnorm(cur, *p.bn); break;
      case LayerKind::leaky_relu: cur = leaky_relu(cur); break;
      case LayerKind::maxpool: cur = maxpool2d(cur, d.pool); break;
      case LayerKind::flatten: cur = flatten(cur); break;
      case LayerKind::linear: cur = linear(cur, p.weight, p.bias); break;
    }
    for (std::size_t r = 0; r < graph_.residuals.size(); ++r) {
      const auto& link = graph_.residuals[r];
      if (link.destination != i) continue;
      const Tensor<T>& src = link.source < 0 ? x : kept[static_cast<std::size_t>(link.source)];
      cur = add(cur, apply_shortcut(r, src));
    }
    if (keep_output_[i]) kept[i] = cur;
    if (next_tap < graph_.tap_points.size() && graph_.tap_points[next_tap] == i) {
      out.taps.push_back(cur);
      ++next_tap;
    }
  }
  if (is_consensus()) {
    auto head_out = head_.forward(out.taps);
    out.logits = std::move(head_out.logits);
    out.per_layer = std::move(head_out.per_layer);
  } else {
    out.logits = cur;
  }
  return out;
}

template <typename T>
NamedTensors<T> Model<T>::named_parameters() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    const auto& l = layers_[i];
    if (l.weight.defined()) {
      out.emplace_back(p + "weight", l.weight);
      out.emplace_back(p + "bias", l.bias);
    }
    if (l.bn) {
      out.emplace_back(p + "gamma", l.bn->gamma);
      out.emplace_back(p + "beta", l.bn->beta);
    }
  }
  for (std::size_t r = 0; r < shortcuts_.size(); ++r) {
    const auto& s = shortcuts_[r];
    if (!s.weight.defined()) continue;
    const std::string p = "shortcut." + std::to_string(r) + ".";
    out.emplace_back(p + "weight", s.weight);
    out.emplace_back(p + "bias", s.bias);
    out.emplace_back(p + "gamma", s.bn->gamma);
    out.emplace_back(p + "beta", s.bn->beta);
  }
  if (is_consensus()) {
    for (auto& kv : head_.named_parameters()) out.push_back(std::move(kv));
  }
  return out;
}

template <typename T>
NamedTensors<T> Model<T>::named_buffers() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].bn) continue;
    const std::string p = "layers." + std::to_string(i) + ".";
    out.emplace_back(p + "running_mean", layers_[i].bn->running_mean);
    out.emplace_back(p + "running_var", layers_[i].bn->running_var);
  }
  for (std::size_t r = 0; r < shortcuts_.size(); ++r) {
    if (!shortcuts_[r].bn) continue;
    const std::string p = "shortcut." + std::to_string(r) + ".";
    out.emplace_back(p + "running_mean", shortcuts_[r].bn->running_mean);
    out.emplace_back(p + "running_var", shortcuts_[r].bn->running_var);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& kv : named_parameters()) out.push_back(kv.second);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& kv : named_parameters()) n += kv.second.numel();
  return n;
}

template <typename T>
void Model<T>::set_requires_grad(bool value) {
  for (auto& kv : named_parameters()) kv.second.set_requires_grad(value);
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model<T> m;
  m.graph_ = graph_;
  m.seed_ = seed_;
  m.training_ = training_;
  m.keep_output_ = keep_output_;
  m.layers_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    m.layers_[i].weight = copy_param(layers_[i].weight);
    m.layers_[i].bias = copy_param(layers_[i].bias);
    if (layers_[i].bn) m.layers_[i].bn = copy_bn(*layers_[i].bn);
  }
  for (const auto& s : shortcuts_) {
    Shortcut c;
    c.weight = copy_param(s.weight);
    c.bias = copy_param(s.bias);
    if (s.bn) c.bn = copy_bn(*s.bn);
    m.shortcuts_.push_back(std::move(c));
  }
  m.head_ = head_;
  for (auto& bank : m.head_.banks()) {
    bank.h_weight = copy_param(bank.h_weight);
    bank.h_bias = copy_param(bank.h_bias);
    bank.prototypes = copy_param(bank.prototypes);
    bank.fc_bias = copy_param(bank.fc_bias);
  }
  return m;
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row, std::size_t classes) {
  const std::size_t K = logits.dim(1);
  if (classes == 0 || classes > K) throw std::invalid_argument("argmax_row: bad class count");
  const T* r = logits.data().data() + row * K;
  std::size_t best = 0;
  for (std::size_t k = 1; k < classes; ++k)
    if (r[k] > r[best]) best = k;
  return best;
}

template class Model<float>;
template class Model<double>;
template std::size_t argmax_row<float>(const Tensor<float>&, std::size_t, std::size_t);
template std::size_t argmax_row<double>(const Tensor<double>&, std::size_t, std::size_t);

}  // namespace dc::nn
