#pragma once

// Trainable networks fusing a multi-layer FeatureStack into one C×S×S descriptor grid.
//
//   kVanilla           F = Σ_i conv3x3_i(up(f_i))
//   kNonlinear         F = Σ_i bottleneck_i(up(f_i))
//   kContextWeighted   h_i = bottleneck_i(up(f_i)), l_i = avgpool(h_i),
//                      w = softmax(MLP([l_1..l_n])), F = Σ_i w_i·h_i
//
// bottleneck(x) = skip(x) + conv3(ReLU(conv2(ReLU(conv1(x))))), with 1×1 conv1/conv3/skip,
// 3×3 conv2 and conv3 zero-initialized. The MLP is affine-ReLU-affine with its last
// layer zero-initialized, so a fresh model starts at uniform weights.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posefuse/blob_io.hpp"
#include "posefuse/features.hpp"
#include "posefuse/tensor.hpp"

namespace posefuse {

enum class Arch { kVanilla, kNonlinear, kContextWeighted };

std::string to_string(Arch arch);
/// Accepts "va", "na", "cwa" (case-insensitive).
Arch parse_arch(const std::string& text);

struct AggregatorConfig {
  Arch arch = Arch::kContextWeighted;
  std::vector<Shape3> layer_spec;
  int channels = 128;    // C
  int resolution = 32;   // S
  int mid_channels = 0;  // bottleneck width; 0 selects C/2
  int hidden = 0;        // MLP hidden width; 0 selects n·C/2
  std::uint64_t seed = 0;

  /// Copy with defaults filled in; throws InvalidArgument on invalid values.
  AggregatorConfig resolved() const;
  bool operator==(const AggregatorConfig&) const = default;
};

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
};

/// One gradient buffer per model parameter, same order and sizes.
using Gradients = std::vector<std::vector<double>>;

/// Fused descriptor grid, C×S×S.
struct AggregatedFeature {
  Tensor map;

  int channels() const noexcept { return map.channels(); }
  int resolution() const noexcept { return map.height(); }
  bool operator==(const AggregatedFeature&) const = default;
};

/// Intermediate activations retained by a forward pass for backward.
struct ForwardTrace {
  struct Layer {
    Shape3 input_shape;
    Tensor upsampled;
    Tensor pre1, pre2;  // conv1 / conv2 outputs before ReLU
    Tensor act1, act2;  // after ReLU
    Tensor extracted;   // Φ_ext output (h_i)
  };
  std::vector<Layer> layers;
  std::vector<double> context;       // [l_1..l_n]
  std::vector<double> hidden_pre;    // MLP hidden before ReLU
  std::vector<double> hidden_act;
  std::vector<double> logits;
  std::vector<double> weights;       // w_1..w_n
};

class AggregatorModel {
 public:
  /// Builds and seeds a fresh model from `config.resolved()`.
  explicit AggregatorModel(const AggregatorConfig& config);

  const AggregatorConfig& config() const noexcept { return config_; }
  Arch arch() const noexcept { return config_.arch; }
  int num_layers() const noexcept { return static_cast<int>(config_.layer_spec.size()); }

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::span<double> parameter(std::string_view name);
  std::span<const double> parameter(std::string_view name) const;

  std::size_t count_params() const noexcept;
  /// Hash of the configuration and every parameter value.
  std::uint64_t fingerprint() const;

  Gradients zero_gradients() const;

  /// Raw (pre-upsample) layer tensors in, C×S×S out.
  Tensor forward(const std::vector<Tensor>& inputs, ForwardTrace* trace = nullptr) const;
  /// Adds dL/dθ into `param_grads`; writes dL/d(inputs) when `input_grads` is non-null.
  void backward(const ForwardTrace& trace, const Tensor& upstream, Gradients& param_grads,
                std::vector<Tensor>* input_grads = nullptr) const;

  AggregatedFeature aggregate(const FeatureStack& stack) const;

  /// Φ_ext of layer i applied to an already-upsampled tensor.
  Tensor extract_layer(int layer, const Tensor& upsampled) const;
  /// Skip projection of layer i (bottleneck archs only).
  Tensor skip_projection(int layer, const Tensor& upsampled) const;
  /// softmax(MLP(concat(pooled))) (context-weighted arch only).
  std::vector<double> context_weights(const std::vector<std::vector<double>>& pooled) const;

  /// Closed-form MLP size n·C·hidden + hidden + hidden·n + n.
  std::size_t context_param_count() const noexcept;

 private:
  struct ConvSlot {
    std::size_t weight = 0, bias = 0;
    int in = 0, out = 0, kernel = 1;
  };
  struct LayerSlots {
    ConvSlot ext;  // kVanilla
    ConvSlot conv1, conv2, conv3, skip;
  };

  ConvSlot add_conv(const std::string& prefix, int in, int out, int kernel, bool zero_init);
  std::size_t add_param(std::string name, std::vector<int> shape);
  Tensor run_conv(const ConvSlot& slot, const Tensor& x) const;
  void run_conv_backward(const ConvSlot& slot, const Tensor& x, const Tensor& dy,
                         Gradients& grads, Tensor* dx) const;
  Tensor bottleneck(int layer, const Tensor& x, ForwardTrace::Layer* trace) const;
  void check_inputs(const std::vector<Tensor>& inputs) const;

  AggregatorConfig config_;
  std::vector<Parameter> params_;
  std::vector<LayerSlots> slots_;
  std::size_t fc1_w_ = 0, fc1_b_ = 0, fc2_w_ = 0, fc2_b_ = 0;
  std::vector<int> fan_in_;  // 0 marks zero-initialized parameters
};

/// Bilinear corner-aligned resize of one map to S×S.
Tensor upsample(const Tensor& map, int target);

AggregatedFeature forward_va(const AggregatorModel& model, const FeatureStack& stack);
AggregatedFeature forward_na(const AggregatorModel& model, const FeatureStack& stack);
AggregatedFeature forward_cwa(const AggregatorModel& model, const FeatureStack& stack);
std::vector<double> context_weights(const AggregatorModel& model,
                                    const std::vector<std::vector<double>>& pooled);
std::size_t count_params(const AggregatorModel& model);

/// Model checkpoint container: model.json + manifest.json + one f64le blob per parameter.
void save_model(const AggregatorModel& model, const std::filesystem::path& dir);
/// Throws VersionMismatch, FormatError, ShapeMismatch or MissingLayer.
AggregatorModel load_model(const std::filesystem::path& dir);
nlohmann::json config_json(const AggregatorConfig& config);
AggregatorConfig parse_config_json(const nlohmann::json& doc);

}  // namespace posefuse
