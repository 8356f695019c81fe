#include "nclab/models.hpp"

#include <cmath>
#include <random>

#include "nclab/errors.hpp"

namespace nclab {

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kAvgPool: return "avgpool";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "dense") return LayerKind::kDense;
  if (name == "conv") return LayerKind::kConv;
  if (name == "relu") return LayerKind::kRelu;
  if (name == "avgpool") return LayerKind::kAvgPool;
  if (name == "flatten") return LayerKind::kFlatten;
  throw ConfigError("unknown layer kind '" + name + "'");
}

namespace {

bool has_params(LayerKind kind) { return kind == LayerKind::kDense || kind == LayerKind::kConv; }

// Walks the stack tracking the activation shape; throws on incompatibility.
void check_stack(const InputShape& input_shape, int num_classes, const std::vector<LayerSpec>& layers) {
  if (input_shape.empty() || (input_shape.size() != 1 && input_shape.size() != 3)) {
    throw ConfigError("input shape must be {d} or {c,h,w}");
  }
  for (std::size_t d : input_shape)
    if (d == 0) throw ConfigError("input shape has a zero dimension");
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (layers.empty() || layers.back().kind != LayerKind::kDense) {
    throw ConfigError("layer stack must end in a dense classifier");
  }
  if (layers.back().out != num_classes) {
    throw ConfigError("classifier maps to " + std::to_string(layers.back().out) + " outputs, expected " +
                      std::to_string(num_classes));
  }
  std::vector<std::size_t> shape = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::kDense:
        if (shape.size() != 1) throw ConfigError(where + ": dense layer needs a flat input");
        if (l.in < 1 || l.out < 1) throw ConfigError(where + ": widths must be >= 1");
        if (static_cast<std::size_t>(l.in) != shape[0]) {
          throw ConfigError(where + ": expects " + std::to_string(l.in) + " inputs, got " +
                            std::to_string(shape[0]));
        }
        shape = {static_cast<std::size_t>(l.out)};
        break;
      case LayerKind::kConv: {
        if (shape.size() != 3) throw ConfigError(where + ": conv layer needs a {c,h,w} input");
        if (l.in < 1 || l.out < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0) {
          throw ConfigError(where + ": invalid conv geometry");
        }
        if (static_cast<std::size_t>(l.in) != shape[0]) {
          throw ConfigError(where + ": expects " + std::to_string(l.in) + " channels, got " +
                            std::to_string(shape[0]));
        }
        const long ph = static_cast<long>(shape[1]) + 2L * l.padding;
        const long pw = static_cast<long>(shape[2]) + 2L * l.padding;
        if (l.kernel > ph || l.kernel > pw) throw ConfigError(where + ": kernel larger than input");
        shape = {static_cast<std::size_t>(l.out), static_cast<std::size_t>((ph - l.kernel) / l.stride + 1),
                 static_cast<std::size_t>((pw - l.kernel) / l.stride + 1)};
        break;
      }
      case LayerKind::kAvgPool:
        if (shape.size() != 3) throw ConfigError(where + ": pooling needs a {c,h,w} input");
        if (l.kernel < 1 || shape[1] % static_cast<std::size_t>(l.kernel) != 0 ||
            shape[2] % static_cast<std::size_t>(l.kernel) != 0) {
          throw ConfigError(where + ": spatial size " + std::to_string(shape[1]) + "x" +
                            std::to_string(shape[2]) + " not divisible by pooling window " +
                            std::to_string(l.kernel));
        }
        shape = {shape[0], shape[1] / static_cast<std::size_t>(l.kernel),
                 shape[2] / static_cast<std::size_t>(l.kernel)};
        break;
      case LayerKind::kFlatten:
        shape = {shape_numel(shape)};
        break;
      case LayerKind::kRelu:
        break;
    }
  }
}

}  // namespace

Network::Network(InputShape input_shape, int num_classes, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)), num_classes_(num_classes), layers_(std::move(layers)) {
  check_stack(input_shape_, num_classes_, layers_);
  param_offset_.assign(layers_.size(), -1);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (!has_params(l.kind)) continue;
    param_offset_[i] = static_cast<int>(params_.size());
    const std::string prefix = "layer" + std::to_string(i) + ".";
    Shape wshape = l.kind == LayerKind::kDense
                       ? Shape{static_cast<std::size_t>(l.out), static_cast<std::size_t>(l.in)}
                       : Shape{static_cast<std::size_t>(l.out), static_cast<std::size_t>(l.in),
                               static_cast<std::size_t>(l.kernel), static_cast<std::size_t>(l.kernel)};
    params_.push_back({prefix + "weight", Tensor::zeros(wshape, true), {}});
    params_.push_back({prefix + "bias", Tensor::zeros({static_cast<std::size_t>(l.out)}, true), {}});
  }
  const std::size_t channels = input_shape_.size() == 3 ? input_shape_[0] : 1;
  norm_.mean.assign(channels, 0.0);
  norm_.std.assign(channels, 1.0);
}

void Network::set_normalization(Normalization norm) {
  const std::size_t channels = input_shape_.size() == 3 ? input_shape_[0] : 1;
  const bool per_feature = input_shape_.size() == 1 && norm.mean.size() == input_shape_[0];
  if (norm.mean.size() != norm.std.size() || (norm.mean.size() != channels && !per_feature)) {
    throw ConfigError("normalization has " + std::to_string(norm.mean.size()) +
                      " entries for input with " + std::to_string(channels) + " channel(s)");
  }
  for (double s : norm.std)
    if (!(s > 0.0)) throw ConfigError("normalization std must be positive");
  norm_ = std::move(norm);
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

std::size_t Network::tap_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    if (has_params(l.kind)) ++n;
  return n;
}

std::size_t Network::penultimate_dim() const { return static_cast<std::size_t>(layers_.back().in); }

Tensor Network::forward(const Tensor& x, ParamMode mode) const { return run(x, mode, false).logits; }

TappedForward Network::forward_with_taps(const Tensor& x, ParamMode mode) const {
  return run(x, mode, true);
}

TappedForward Network::run(const Tensor& x, ParamMode mode, bool collect_taps) const {
  if (layers_.empty()) throw ContractError("forward: network has no layers");
  const Shape& xs = x.shape();
  if (xs.size() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), xs.begin() + 1)) {
    throw DimensionError("forward: input " + shape_str(xs) + " does not match network input " +
                         shape_str(input_shape_) + " with a leading batch axis");
  }
  auto param = [&](int idx) -> Tensor {
    const Tensor& t = params_[static_cast<std::size_t>(idx)].value;
    return mode == ParamMode::kTrainable ? t : t.detach();
  };
  TappedForward result;
  Tensor h = normalize_channels(x, norm_.mean, norm_.std);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    switch (l.kind) {
      case LayerKind::kDense:
        if (collect_taps) result.taps.push_back(h);
        h = linear(h, param(param_offset_[i]), param(param_offset_[i] + 1));
        break;
      case LayerKind::kConv:
        if (collect_taps) result.taps.push_back(h);
        h = conv2d(h, param(param_offset_[i]), param(param_offset_[i] + 1), l.stride, l.padding);
        break;
      case LayerKind::kRelu:
        h = relu(h);
        break;
      case LayerKind::kAvgPool:
        h = avg_pool2d(h, l.kernel);
        break;
      case LayerKind::kFlatten:
        h = flatten(h);
        break;
    }
  }
  result.logits = h;
  return result;
}

std::pair<Tensor, Tensor> Network::classifier_params() const {
  const int idx = param_offset_.back();
  return {params_[static_cast<std::size_t>(idx)].value, params_[static_cast<std::size_t>(idx) + 1].value};
}

Network Network::clone() const {
  Network copy = *this;
  for (auto& p : copy.params_) {
    p.value = p.value.clone();
    p.velocity.clear();
  }
  return copy;
}

void Network::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Network build_network(InputShape input_shape, int num_classes, std::vector<LayerSpec> layers,
                      std::uint64_t seed) {
  Network net(std::move(input_shape), num_classes, std::move(layers));
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < net.layers_.size(); ++i) {
    const auto& l = net.layers_[i];
    if (!has_params(l.kind)) continue;
    const double receptive = l.kind == LayerKind::kConv ? static_cast<double>(l.kernel * l.kernel) : 1.0;
    const double fan_in = l.in * receptive;
    const double fan_out = l.out * receptive;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto w = net.params_[static_cast<std::size_t>(net.param_offset_[i])].value.mutable_data();
    for (double& v : w) v = dist(rng);
  }
  return net;
}

Network network_from_parts(InputShape input_shape, int num_classes, std::vector<LayerSpec> layers,
                           Normalization norm, std::vector<Parameter> params) {
  Network net(std::move(input_shape), num_classes, std::move(layers));
  net.set_normalization(std::move(norm));
  if (params.size() != net.params_.size()) {
    throw FormatError("expected " + std::to_string(net.params_.size()) + " parameter tensors, got " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& dst = net.params_[i];
    if (params[i].name != dst.name || params[i].value.shape() != dst.value.shape()) {
      throw FormatError("parameter " + std::to_string(i) + " is '" + params[i].name + "' " +
                        shape_str(params[i].value.shape()) + ", model expects '" + dst.name + "' " +
                        shape_str(dst.value.shape()));
    }
    auto src = params[i].value.data();
    std::copy(src.begin(), src.end(), dst.value.mutable_data().begin());
  }
  return net;
}

Network build_mlp(int input_dim, std::span<const int> hidden_widths, int num_classes, std::uint64_t seed) {
  if (input_dim < 1) throw ConfigError("build_mlp: input_dim must be >= 1");
  std::vector<LayerSpec> layers;
  int prev = input_dim;
  for (int w : hidden_widths) {
    if (w < 1) throw ConfigError("build_mlp: hidden width " + std::to_string(w) + " must be >= 1");
    layers.push_back({LayerKind::kDense, prev, w});
    layers.push_back({LayerKind::kRelu});
    prev = w;
  }
  layers.push_back({LayerKind::kDense, prev, num_classes});
  return build_network({static_cast<std::size_t>(input_dim)}, num_classes, std::move(layers), seed);
}

Network build_small_convnet(std::span<const int> channels, const InputShape& input_shape, int num_classes,
                            std::uint64_t seed) {
  if (channels.empty()) throw ConfigError("build_small_convnet: at least one conv block is required");
  if (input_shape.size() != 3) throw ConfigError("build_small_convnet: input shape must be {c,h,w}");
  const std::size_t factor = std::size_t{1} << channels.size();
  if (input_shape[1] % factor != 0 || input_shape[2] % factor != 0) {
    throw ConfigError("build_small_convnet: spatial size " + std::to_string(input_shape[1]) + "x" +
                      std::to_string(input_shape[2]) + " not divisible by 2^" +
                      std::to_string(channels.size()));
  }
  std::vector<LayerSpec> layers;
  int prev = static_cast<int>(input_shape[0]);
  for (int c : channels) {
    if (c < 1) throw ConfigError("build_small_convnet: channel count must be >= 1");
    layers.push_back({LayerKind::kConv, prev, c, 3, 1, 1});
    layers.push_back({LayerKind::kRelu});
    layers.push_back({LayerKind::kAvgPool, 0, 0, 2});
    prev = c;
  }
  layers.push_back({LayerKind::kFlatten});
  const int flat = prev * static_cast<int>((input_shape[1] / factor) * (input_shape[2] / factor));
  layers.push_back({LayerKind::kDense, flat, num_classes});
  return build_network(input_shape, num_classes, std::move(layers), seed);
}

Tensor make_input_batch(const InputShape& input_shape, std::span<const double> flat, std::size_t count,
                        bool requires_grad) {
  Shape shape{count};
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  return Tensor::from_data(std::move(shape), std::vector<double>(flat.begin(), flat.end()), requires_grad);
}

}  // namespace nclab
