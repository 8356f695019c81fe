#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nclab/tensor.hpp"

namespace nclab {

enum class LayerKind { kDense, kConv, kRelu, kAvgPool, kFlatten };

std::string layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  // dense: in_features/out_features; conv: in/out channels.
  int in = 0;
  int out = 0;
  int kernel = 0;  // conv kernel size or pooling window
  int stride = 1;
  int padding = 0;

  bool operator==(const LayerSpec&) const = default;
};

// Per-sample input layout: {d} for vectors or {c, h, w} for images.
using InputShape = std::vector<std::size_t>;

struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> velocity;  // SGD momentum buffer
};

// Mean/std preprocessing applied inside forward so attacks work in raw [0,1]
// input units. One entry per channel (or a single entry for vector inputs).
struct Normalization {
  std::vector<double> mean{0.0};
  std::vector<double> std{1.0};

  bool operator==(const Normalization&) const = default;
};

enum class ParamMode {
  kTrainable,  // parameters join the graph and receive gradients
  kConstant,   // parameters are read as constants
};

struct TappedForward {
  Tensor logits;
  // Input activation of every conv and dense layer, ordered by depth. The last
  // entry is the penultimate representation fed to the classifier.
  std::vector<Tensor> taps;
};

class Network {
 public:
  Network() = default;
  Network(InputShape input_shape, int num_classes, std::vector<LayerSpec> layers);

  const InputShape& input_shape() const { return input_shape_; }
  int num_classes() const { return num_classes_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  const Normalization& normalization() const { return norm_; }
  void set_normalization(Normalization norm);

  std::size_t tap_count() const;
  std::size_t penultimate_dim() const;

  Tensor forward(const Tensor& x, ParamMode mode = ParamMode::kTrainable) const;
  TappedForward forward_with_taps(const Tensor& x, ParamMode mode = ParamMode::kTrainable) const;

  // Live handles to the final dense layer: W [C x p], b [C].
  std::pair<Tensor, Tensor> classifier_params() const;

  // Independent copy of all parameter values; momentum buffers are dropped.
  Network clone() const;

  void zero_grad();

 private:
  friend Network build_network(InputShape, int, std::vector<LayerSpec>, std::uint64_t);
  friend Network network_from_parts(InputShape, int, std::vector<LayerSpec>, Normalization,
                                    std::vector<Parameter>);

  void validate() const;
  TappedForward run(const Tensor& x, ParamMode mode, bool collect_taps) const;

  InputShape input_shape_;
  int num_classes_ = 0;
  std::vector<LayerSpec> layers_;
  std::vector<Parameter> params_;
  std::vector<int> param_offset_;  // per layer: index of weight in params_, or -1
  Normalization norm_;
};

// Validates the layer stack and draws weights uniformly from
// +-sqrt(6 / (fan_in + fan_out)), biases zero.
Network build_network(InputShape input_shape, int num_classes, std::vector<LayerSpec> layers,
                      std::uint64_t seed);

Network network_from_parts(InputShape input_shape, int num_classes, std::vector<LayerSpec> layers,
                           Normalization norm, std::vector<Parameter> params);

// dense -> relu stack ending in a C-way dense classifier.
Network build_mlp(int input_dim, std::span<const int> hidden_widths, int num_classes,
                  std::uint64_t seed);

// Blocks of conv(3x3, pad 1) -> relu -> avgpool(2), then flatten and a dense
// classifier. input_shape is {c, h, w}.
Network build_small_convnet(std::span<const int> channels, const InputShape& input_shape,
                            int num_classes, std::uint64_t seed);

// Batched input tensor [n x input_shape...] from row-major samples.
Tensor make_input_batch(const InputShape& input_shape, std::span<const double> flat,
                        std::size_t count, bool requires_grad = false);

}  // namespace nclab
