#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "robodet/detect.hpp"
#include "robodet/layers.hpp"
#include "robodet/model.hpp"
#include "robodet/sparse.hpp"

namespace robodet {

/// One instantiated convolution with its optional batch norm and prune mask.
template <typename Scalar>
struct NetLayer {
  LayerSpec spec;
  ConvParams<Scalar> conv;
  std::optional<BatchNormParams<Scalar>> bn;
  std::vector<std::uint8_t> mask;  // one entry per weight, 0 = pruned

  [[nodiscard]] Eigen::Index weight_count() const { return conv.weights.size(); }

  void apply_mask() {
    Scalar* w = conv.weights.data();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] == 0) w[i] = Scalar(0);
    }
  }

  [[nodiscard]] std::size_t kept() const {
    std::size_t count = 0;
    for (auto m : mask) count += m != 0;
    return count;
  }

  /// Fraction of weights the mask keeps.
  [[nodiscard]] double kept_fraction() const {
    return mask.empty() ? 1.0 : static_cast<double>(kept()) / static_cast<double>(mask.size());
  }

  /// Fraction of weights that are numerically nonzero.
  [[nodiscard]] double nonzero_fraction() const {
    const auto& w = conv.weights.values();
    if (w.size() == 0) return 0.0;
    return static_cast<double>((w.array() != Scalar(0)).count()) / static_cast<double>(w.size());
  }
};

/// Instantiated model: backbone layers followed by head_lo and head_hi.
template <typename Scalar>
struct Network {
  ModelSpec spec;
  std::vector<NetLayer<Scalar>> layers;
  AnchorSet anchors = uniform_anchors(0.1, 0.1);

  [[nodiscard]] int backbone_size() const { return spec.backbone_size(); }
  NetLayer<Scalar>& head(int h) { return layers[backbone_size() + h]; }
  const NetLayer<Scalar>& head(int h) const { return layers[backbone_size() + h]; }

  [[nodiscard]] Shape input_shape(int batch) const { return {batch, spec.in_channels, spec.height, spec.width}; }

  void apply_masks() {
    for (auto& layer : layers) layer.apply_mask();
  }

  template <typename Other>
  [[nodiscard]] Network<Other> cast() const;
};

/// Network with the spec's shapes, all weights zero, BN at identity, masks all-pass.
template <typename Scalar>
Network<Scalar> make_network(const ModelSpec& spec) {
  validate(spec);
  Network<Scalar> net;
  net.spec = spec;
  auto add = [&](const LayerSpec& ls) {
    NetLayer<Scalar> layer;
    layer.spec = ls;
    layer.conv = ConvParams<Scalar>(ls.kernel, ls.stride, ls.in_ch, ls.out_ch);
    if (ls.has_bn) layer.bn = BatchNormParams<Scalar>(ls.out_ch);
    layer.mask.assign(static_cast<std::size_t>(layer.conv.weights.size()), 1);
    net.layers.push_back(std::move(layer));
  };
  for (const auto& ls : spec.layers) add(ls);
  for (const auto& head : spec.heads) add(spec.head_layer(head));
  return net;
}

inline constexpr double kHeadInitStd = 0.01;
inline constexpr double kObjectnessPriorBias = -4.0;  // σ(-4) ≈ 0.018

/// Seeded initialization: He-normal backbone weights (std √(2/(k²·in_ch))), zero biases,
/// and near-zero head weights with a negative objectness bias so that every cell starts
/// out predicting "no object".
template <typename Scalar>
Network<Scalar> init_network(const ModelSpec& spec, std::uint64_t seed) {
  Network<Scalar> net = make_network<Scalar>(spec);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const bool is_head = static_cast<int>(l) >= net.backbone_size();
    const double std_dev = is_head ? kHeadInitStd : std::sqrt(2.0 / static_cast<double>(layer.conv.patch_size()));
    std::normal_distribution<double> dist(0.0, std_dev);
    auto& w = layer.conv.weights.values();
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(dist(rng));
    if (is_head) {
      for (int slot = 0; slot < HeadSpec::slots(); ++slot) {
        layer.conv.bias[5 * slot + 4] = static_cast<Scalar>(kObjectnessPriorBias);
      }
    }
  }
  return net;
}

template <typename Scalar>
template <typename Other>
Network<Other> Network<Scalar>::cast() const {
  Network<Other> out;
  out.spec = spec;
  out.anchors = anchors;
  for (const auto& layer : layers) {
    NetLayer<Other> o;
    o.spec = layer.spec;
    o.conv = ConvParams<Other>(layer.conv.kernel, layer.conv.stride, layer.conv.in_ch, layer.conv.out_ch);
    o.conv.weights = layer.conv.weights.template cast<Other>();
    o.conv.bias = layer.conv.bias.template cast<Other>();
    if (layer.bn) {
      BatchNormParams<Other> bn(layer.bn->channels());
      bn.gamma = layer.bn->gamma.template cast<Other>();
      bn.beta = layer.bn->beta.template cast<Other>();
      bn.running_mean = layer.bn->running_mean.template cast<Other>();
      bn.running_var = layer.bn->running_var.template cast<Other>();
      bn.momentum = static_cast<Other>(layer.bn->momentum);
      bn.epsilon = static_cast<Other>(layer.bn->epsilon);
      o.bn = std::move(bn);
    }
    o.mask = layer.mask;
    out.layers.push_back(std::move(o));
  }
  return out;
}

// ---------------------------------------------------------------------------
// forward / backward

template <typename Scalar>
struct RawOutputs {
  Tensor<Scalar> lo;  // (n, 10, G_lo_h, G_lo_w)
  Tensor<Scalar> hi;  // (n, 10, G_hi_h, G_hi_w)
};

/// Per-layer values a training forward pass keeps for backpropagation.
template <typename Scalar>
struct ForwardCache {
  std::vector<Tensor<Scalar>> inputs;
  std::vector<Tensor<Scalar>> pre_activation;
  std::vector<BatchNormCache<Scalar>> bn;
};

template <typename Scalar>
struct LayerGrads {
  Tensor<Scalar> weights;
  Vector<Scalar> bias;
  Vector<Scalar> gamma;  // empty without BN
  Vector<Scalar> beta;
};

template <typename Scalar>
struct Gradients {
  std::vector<LayerGrads<Scalar>> layers;
};

namespace detail {

template <typename Scalar>
void check_network_input(const Network<Scalar>& net, const Tensor<Scalar>& input) {
  const Shape& s = input.shape();
  if (s.n < 1 || s.c != net.spec.in_channels || s.h != net.spec.height || s.w != net.spec.width) {
    throw ShapeError("network '" + net.spec.name + "' expects input (n, " + std::to_string(net.spec.in_channels) +
                     ", " + std::to_string(net.spec.height) + ", " + std::to_string(net.spec.width) + "), got " +
                     to_string(s));
  }
}

}  // namespace detail

/// Runs the backbone and both heads. Train mode uses batch statistics (and updates
/// running statistics); `cache`, when given, receives what backward() needs.
template <typename Scalar>
RawOutputs<Scalar> forward(Network<Scalar>& net, const Tensor<Scalar>& input, Mode mode,
                           ForwardCache<Scalar>* cache = nullptr) {
  detail::check_network_input(net, input);
  const int count = static_cast<int>(net.layers.size());
  if (cache != nullptr) {
    cache->inputs.assign(count, {});
    cache->pre_activation.assign(count, {});
    cache->bn.assign(count, {});
  }
  std::vector<Tensor<Scalar>> taps(2);
  Tensor<Scalar> x = input;
  for (int i = 0; i < net.backbone_size(); ++i) {
    auto& layer = net.layers[i];
    Tensor<Scalar> y = conv2d_forward(x, layer.conv);
    if (layer.bn) {
      y = batch_norm(y, *layer.bn, mode, cache != nullptr ? &cache->bn[i] : nullptr);
    }
    if (cache != nullptr) {
      cache->inputs[i] = std::move(x);
      if (layer.spec.activation == Activation::leaky) cache->pre_activation[i] = y;
    }
    if (layer.spec.activation == Activation::leaky) leaky_relu_inplace(y);
    if (layer.spec.tap == HeadTap::head_lo) taps[0] = y;
    if (layer.spec.tap == HeadTap::head_hi) taps[1] = y;
    x = std::move(y);
  }
  RawOutputs<Scalar> out;
  out.lo = conv2d_forward(taps[0], net.head(0).conv);
  out.hi = conv2d_forward(taps[1], net.head(1).conv);
  if (cache != nullptr) {
    cache->inputs[net.backbone_size()] = std::move(taps[0]);
    cache->inputs[net.backbone_size() + 1] = std::move(taps[1]);
  }
  return out;
}

/// Inference-mode forward pass over an unmodified network.
template <typename Scalar>
RawOutputs<Scalar> infer(const Network<Scalar>& net, const Tensor<Scalar>& input) {
  detail::check_network_input(net, input);
  std::vector<Tensor<Scalar>> taps(2);
  Tensor<Scalar> x = input;
  for (int i = 0; i < net.backbone_size(); ++i) {
    const auto& layer = net.layers[i];
    Tensor<Scalar> y = conv2d_forward(x, layer.conv);
    if (layer.bn) y = batch_norm(y, *layer.bn);
    if (layer.spec.activation == Activation::leaky) leaky_relu_inplace(y);
    if (layer.spec.tap == HeadTap::head_lo) taps[0] = y;
    if (layer.spec.tap == HeadTap::head_hi) taps[1] = y;
    x = std::move(y);
  }
  return {conv2d_forward(taps[0], net.head(0).conv), conv2d_forward(taps[1], net.head(1).conv)};
}

/// Backpropagates head-output gradients through a cached training forward pass.
/// Gradients of pruned weights are zero.
template <typename Scalar>
Gradients<Scalar> backward(const Network<Scalar>& net, const ForwardCache<Scalar>& cache,
                           const Tensor<Scalar>& grad_lo, const Tensor<Scalar>& grad_hi) {
  const int backbone = net.backbone_size();
  Gradients<Scalar> grads;
  grads.layers.resize(net.layers.size());
  std::vector<Tensor<Scalar>> grad_out(backbone);

  auto accumulate = [&](int layer_index, Tensor<Scalar>&& g) {
    auto& slot = grad_out[layer_index];
    if (slot.empty()) {
      slot = std::move(g);
    } else {
      slot.values() += g.values();
    }
  };

  const Tensor<Scalar>* head_grads[2] = {&grad_lo, &grad_hi};
  for (int h = 0; h < 2; ++h) {
    const auto& layer = net.head(h);
    auto g = conv2d_backward(cache.inputs[backbone + h], layer.conv, *head_grads[h]);
    grads.layers[backbone + h] = {std::move(g.weights), std::move(g.bias), {}, {}};
    accumulate(net.spec.heads[h].source_layer - 1, std::move(g.input));
  }

  for (int i = backbone - 1; i >= 0; --i) {
    const auto& layer = net.layers[i];
    Tensor<Scalar> g = std::move(grad_out[i]);
    if (g.empty()) g = Tensor<Scalar>(conv_output_shape(cache.inputs[i].shape(), layer.conv));
    if (layer.spec.activation == Activation::leaky) g = leaky_relu_backward(cache.pre_activation[i], g);
    auto& lg = grads.layers[i];
    if (layer.bn) {
      auto bg = batch_norm_backward(g, *layer.bn, cache.bn[i]);
      lg.gamma = std::move(bg.gamma);
      lg.beta = std::move(bg.beta);
      g = std::move(bg.input);
    }
    auto cg = conv2d_backward(cache.inputs[i], layer.conv, g, i > 0);
    lg.weights = std::move(cg.weights);
    lg.bias = std::move(cg.bias);
    if (i > 0) accumulate(i - 1, std::move(cg.input));
  }

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& mask = net.layers[l].mask;
    Scalar* gw = grads.layers[l].weights.data();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] == 0) gw[i] = Scalar(0);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// compiled inference

struct ExecutionOptions {
  bool sparse = false;
  double density_threshold = kSparseDensityThreshold;
};

/// Inference plan: batch norms folded into convolutions and, when enabled, sparse
/// layers switched to the compressed-weight product.
template <typename Scalar>
struct CompiledNetwork {
  struct Step {
    ConvParams<Scalar> conv;
    std::optional<SparseConvWeights<Scalar>> sparse;
    bool leaky = true;
    HeadTap tap = HeadTap::none;
  };
  ModelSpec spec;
  std::vector<Step> backbone;
  std::array<Step, 2> heads;

  [[nodiscard]] int sparse_layers() const {
    int count = 0;
    for (const auto& s : backbone) count += s.sparse.has_value();
    for (const auto& s : heads) count += s.sparse.has_value();
    return count;
  }
};

template <typename Scalar>
CompiledNetwork<Scalar> compile(const Network<Scalar>& net, const ExecutionOptions& options = {}) {
  CompiledNetwork<Scalar> plan;
  plan.spec = net.spec;
  auto make_step = [&](const NetLayer<Scalar>& layer) {
    typename CompiledNetwork<Scalar>::Step step;
    step.conv = layer.bn ? fold_batch_norm(layer.conv, *layer.bn) : layer.conv;
    step.leaky = layer.spec.activation == Activation::leaky;
    step.tap = layer.spec.tap;
    if (options.sparse) {
      auto sparse = SparseConvWeights<Scalar>::from(step.conv);
      if (sparse.density() < options.density_threshold) step.sparse = std::move(sparse);
    }
    return step;
  };
  for (int i = 0; i < net.backbone_size(); ++i) plan.backbone.push_back(make_step(net.layers[i]));
  plan.heads = {make_step(net.head(0)), make_step(net.head(1))};
  return plan;
}

template <typename Scalar>
RawOutputs<Scalar> infer(const CompiledNetwork<Scalar>& plan, const Tensor<Scalar>& input) {
  const Shape& s = input.shape();
  if (s.c != plan.spec.in_channels || s.h != plan.spec.height || s.w != plan.spec.width) {
    throw ShapeError("compiled network '" + plan.spec.name + "' got input " + to_string(s));
  }
  auto run = [](const typename CompiledNetwork<Scalar>::Step& step, const Tensor<Scalar>& x) {
    Tensor<Scalar> y = step.sparse ? conv2d_forward_sparse(x, step.conv, *step.sparse) : conv2d_forward(x, step.conv);
    if (step.leaky) leaky_relu_inplace(y);
    return y;
  };
  std::vector<Tensor<Scalar>> taps(2);
  Tensor<Scalar> x = input;
  for (const auto& step : plan.backbone) {
    Tensor<Scalar> y = run(step, x);
    if (step.tap == HeadTap::head_lo) taps[0] = y;
    if (step.tap == HeadTap::head_hi) taps[1] = y;
    x = std::move(y);
  }
  return {run(plan.heads[0], taps[0]), run(plan.heads[1], taps[1])};
}

/// Decoded, thresholded detections for sample `n` of a forward pass.
template <typename Scalar>
std::vector<Detection> detections_from(const RawOutputs<Scalar>& raw, const ModelSpec& spec, const AnchorSet& anchors,
                                       double conf_threshold, std::optional<double> nms_iou = std::nullopt,
                                       int n = 0) {
  const auto lo = decode(raw.lo, spec.heads[0], anchors, spec.grid(spec.heads[0]), n);
  const auto hi = decode(raw.hi, spec.heads[1], anchors, spec.grid(spec.heads[1]), n);
  return postprocess(lo, hi, conf_threshold, nms_iou);
}

/// Sum of |w| over every convolution's weights.
template <typename Scalar>
double l1_norm(const Network<Scalar>& net) {
  double total = 0.0;
  for (const auto& layer : net.layers) total += static_cast<double>(layer.conv.weights.values().template lpNorm<1>());
  return total;
}

extern template struct Network<float>;
extern template struct Network<double>;

}  // namespace robodet
