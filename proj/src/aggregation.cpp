#include "posefuse/aggregation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "posefuse/error.hpp"
#include "posefuse/nn_ops.hpp"

namespace posefuse {

namespace fs = std::filesystem;

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::kVanilla:
      return "va";
    case Arch::kNonlinear:
      return "na";
    case Arch::kContextWeighted:
      return "cwa";
  }
  return "unknown";
}

Arch parse_arch(const std::string& text) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (lower == "va" || lower == "a") return Arch::kVanilla;
  if (lower == "na" || lower == "b") return Arch::kNonlinear;
  if (lower == "cwa" || lower == "c") return Arch::kContextWeighted;
  throw InvalidArgument("unknown architecture '" + text + "' (expected va, na or cwa)");
}

AggregatorConfig AggregatorConfig::resolved() const {
  AggregatorConfig out = *this;
  if (out.layer_spec.empty()) throw InvalidArgument("layer_spec must be non-empty");
  for (const auto& s : out.layer_spec) {
    if (s.channels < 1 || s.height < 1 || s.width < 1) {
      throw InvalidArgument("layer_spec entries must be positive");
    }
  }
  if (out.channels < 1) throw InvalidArgument("channels must be positive");
  if (out.resolution < 1) throw InvalidArgument("resolution must be positive");
  if (out.mid_channels == 0) out.mid_channels = std::max(1, out.channels / 2);
  const int n = static_cast<int>(out.layer_spec.size());
  if (out.hidden == 0) out.hidden = std::max(1, n * out.channels / 2);
  if (out.mid_channels < 1 || out.hidden < 1) {
    throw InvalidArgument("mid_channels and hidden must be positive");
  }
  return out;
}

std::size_t AggregatorModel::add_param(std::string name, std::vector<int> shape) {
  std::size_t size = 1;
  for (int d : shape) size *= static_cast<std::size_t>(d);
  params_.push_back({std::move(name), std::move(shape), std::vector<double>(size, 0.0)});
  fan_in_.push_back(0);
  return params_.size() - 1;
}

AggregatorModel::ConvSlot AggregatorModel::add_conv(const std::string& prefix, int in, int out,
                                                    int kernel, bool zero_init) {
  ConvSlot slot;
  slot.in = in;
  slot.out = out;
  slot.kernel = kernel;
  slot.weight = add_param(prefix + ".weight", {out, in, kernel, kernel});
  slot.bias = add_param(prefix + ".bias", {out});
  if (!zero_init) {
    fan_in_[slot.weight] = in * kernel * kernel;
    fan_in_[slot.bias] = in * kernel * kernel;
  }
  return slot;
}

AggregatorModel::AggregatorModel(const AggregatorConfig& config) : config_(config.resolved()) {
  const int n = num_layers();
  const int c = config_.channels;
  const int mid = config_.mid_channels;
  slots_.resize(n);
  for (int i = 0; i < n; ++i) {
    const std::string prefix = "layer" + std::to_string(i);
    const int ci = config_.layer_spec[i].channels;
    if (config_.arch == Arch::kVanilla) {
      slots_[i].ext = add_conv(prefix + ".ext", ci, c, 3, false);
    } else {
      slots_[i].conv1 = add_conv(prefix + ".conv1", ci, mid, 1, false);
      slots_[i].conv2 = add_conv(prefix + ".conv2", mid, mid, 3, false);
      slots_[i].conv3 = add_conv(prefix + ".conv3", mid, c, 1, true);
      slots_[i].skip = add_conv(prefix + ".skip", ci, c, 1, false);
    }
  }
  if (config_.arch == Arch::kContextWeighted) {
    const int in = n * c;
    const int hidden = config_.hidden;
    fc1_w_ = add_param("context.fc1.weight", {hidden, in});
    fc1_b_ = add_param("context.fc1.bias", {hidden});
    fan_in_[fc1_w_] = in;
    fan_in_[fc1_b_] = in;
    fc2_w_ = add_param("context.fc2.weight", {n, hidden});
    fc2_b_ = add_param("context.fc2.bias", {n});
  }

  // Fan-in scaled uniform init, drawn in parameter order from one seeded stream.
  std::mt19937_64 rng(config_.seed);
  for (std::size_t p = 0; p < params_.size(); ++p) {
    if (fan_in_[p] == 0) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in_[p]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : params_[p].value) v = dist(rng);
  }
}

std::span<double> AggregatorModel::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw InvalidArgument("no parameter named '" + std::string(name) + "'");
}

std::span<const double> AggregatorModel::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw InvalidArgument("no parameter named '" + std::string(name) + "'");
}

std::size_t AggregatorModel::count_params() const noexcept {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

std::size_t AggregatorModel::context_param_count() const noexcept {
  if (config_.arch != Arch::kContextWeighted) return 0;
  const std::size_t n = config_.layer_spec.size();
  const std::size_t c = static_cast<std::size_t>(config_.channels);
  const std::size_t h = static_cast<std::size_t>(config_.hidden);
  return n * c * h + h + h * n + n;
}

std::uint64_t AggregatorModel::fingerprint() const {
  Fnv1a hash;
  hash.update(config_json(config_).dump());
  for (const auto& p : params_) {
    hash.update(p.name);
    hash.update(std::span<const double>(p.value));
  }
  return hash.digest();
}

Gradients AggregatorModel::zero_gradients() const {
  Gradients g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p.value.size(), 0.0);
  return g;
}

Tensor AggregatorModel::run_conv(const ConvSlot& slot, const Tensor& x) const {
  return nn::conv2d(x, params_[slot.weight].value, params_[slot.bias].value, slot.out,
                    slot.kernel);
}

void AggregatorModel::run_conv_backward(const ConvSlot& slot, const Tensor& x, const Tensor& dy,
                                        Gradients& grads, Tensor* dx) const {
  nn::conv2d_backward(x, dy, params_[slot.weight].value, slot.kernel, grads[slot.weight],
                      grads[slot.bias], dx);
}

Tensor AggregatorModel::bottleneck(int layer, const Tensor& x, ForwardTrace::Layer* trace) const {
  const auto& s = slots_[layer];
  Tensor pre1 = run_conv(s.conv1, x);
  Tensor act1 = nn::relu(pre1);
  Tensor pre2 = run_conv(s.conv2, act1);
  Tensor act2 = nn::relu(pre2);
  Tensor out = run_conv(s.skip, x);
  const Tensor residual = run_conv(s.conv3, act2);
  auto o = out.values();
  const auto r = residual.values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] += r[k];
  if (trace != nullptr) {
    trace->pre1 = std::move(pre1);
    trace->act1 = std::move(act1);
    trace->pre2 = std::move(pre2);
    trace->act2 = std::move(act2);
  }
  return out;
}

Tensor AggregatorModel::extract_layer(int layer, const Tensor& upsampled) const {
  if (layer < 0 || layer >= num_layers()) throw InvalidArgument("layer index out of range");
  if (config_.arch == Arch::kVanilla) return run_conv(slots_[layer].ext, upsampled);
  return bottleneck(layer, upsampled, nullptr);
}

Tensor AggregatorModel::skip_projection(int layer, const Tensor& upsampled) const {
  if (config_.arch == Arch::kVanilla) throw InvalidArgument("vanilla aggregation has no skip path");
  if (layer < 0 || layer >= num_layers()) throw InvalidArgument("layer index out of range");
  return run_conv(slots_[layer].skip, upsampled);
}

std::vector<double> AggregatorModel::context_weights(
    const std::vector<std::vector<double>>& pooled) const {
  if (config_.arch != Arch::kContextWeighted) {
    throw InvalidArgument("context weights exist only for the context-weighted arch");
  }
  if (pooled.size() != config_.layer_spec.size()) {
    throw ShapeMismatch("expected one pooled vector per layer");
  }
  std::vector<double> context;
  for (const auto& l : pooled) {
    if (l.size() != static_cast<std::size_t>(config_.channels)) {
      throw ShapeMismatch("pooled vectors must have C entries");
    }
    context.insert(context.end(), l.begin(), l.end());
  }
  auto hidden = nn::affine(context, params_[fc1_w_].value, params_[fc1_b_].value, config_.hidden);
  for (auto& v : hidden) v = v > 0.0 ? v : 0.0;
  const auto logits =
      nn::affine(hidden, params_[fc2_w_].value, params_[fc2_b_].value, num_layers());
  return nn::softmax(logits);
}

void AggregatorModel::check_inputs(const std::vector<Tensor>& inputs) const {
  if (inputs.size() != config_.layer_spec.size()) {
    throw ShapeMismatch("model expects " + std::to_string(config_.layer_spec.size()) +
                        " layers, got " + std::to_string(inputs.size()));
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!(inputs[i].shape() == config_.layer_spec[i])) {
      throw ShapeMismatch("layer " + std::to_string(i) + " has shape " +
                          to_string(inputs[i].shape()) + ", model expects " +
                          to_string(config_.layer_spec[i]));
    }
  }
}

Tensor AggregatorModel::forward(const std::vector<Tensor>& inputs, ForwardTrace* trace) const {
  check_inputs(inputs);
  const int n = num_layers();
  const int s = config_.resolution;
  const int c = config_.channels;
  ForwardTrace local;
  ForwardTrace& tr = trace != nullptr ? *trace : local;
  tr = ForwardTrace{};
  tr.layers.resize(n);

  for (int i = 0; i < n; ++i) {
    auto& lt = tr.layers[i];
    lt.input_shape = inputs[i].shape();
    lt.upsampled = nn::upsample(inputs[i], s);
    if (config_.arch == Arch::kVanilla) {
      lt.extracted = run_conv(slots_[i].ext, lt.upsampled);
    } else {
      lt.extracted = bottleneck(i, lt.upsampled, &lt);
    }
  }

  Tensor out({c, s, s});
  auto o = out.values();
  if (config_.arch != Arch::kContextWeighted) {
    for (int i = 0; i < n; ++i) {
      const auto h = tr.layers[i].extracted.values();
      for (std::size_t k = 0; k < o.size(); ++k) o[k] += h[k];
    }
    return out;
  }

  for (int i = 0; i < n; ++i) {
    const auto l = nn::global_average_pool(tr.layers[i].extracted);
    tr.context.insert(tr.context.end(), l.begin(), l.end());
  }
  tr.hidden_pre = nn::affine(tr.context, params_[fc1_w_].value, params_[fc1_b_].value, config_.hidden);
  tr.hidden_act = tr.hidden_pre;
  for (auto& v : tr.hidden_act) v = v > 0.0 ? v : 0.0;
  tr.logits = nn::affine(tr.hidden_act, params_[fc2_w_].value, params_[fc2_b_].value, n);
  tr.weights = nn::softmax(tr.logits);
  for (int i = 0; i < n; ++i) {
    const double w = tr.weights[i];
    const auto h = tr.layers[i].extracted.values();
    for (std::size_t k = 0; k < o.size(); ++k) o[k] += w * h[k];
  }
  return out;
}

void AggregatorModel::backward(const ForwardTrace& trace, const Tensor& upstream,
                               Gradients& param_grads, std::vector<Tensor>* input_grads) const {
  const int n = num_layers();
  const int s = config_.resolution;
  const int c = config_.channels;
  if (!(upstream.shape() == Shape3{c, s, s})) {
    throw ShapeMismatch("upstream gradient must be " + to_string(Shape3{c, s, s}));
  }
  if (trace.layers.size() != static_cast<std::size_t>(n)) {
    throw InvalidArgument("forward trace does not belong to this model");
  }
  if (param_grads.size() != params_.size()) throw ShapeMismatch("gradient buffer mismatch");
  if (input_grads != nullptr) input_grads->assign(n, Tensor{});

  // dL/dh_i for every layer.
  std::vector<Tensor> dh(n);
  if (config_.arch != Arch::kContextWeighted) {
    for (int i = 0; i < n; ++i) dh[i] = upstream;
  } else {
    std::vector<double> dw(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const auto h = trace.layers[i].extracted.values();
      const auto g = upstream.values();
      double acc = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) acc += g[k] * h[k];
      dw[i] = acc;
    }
    double weighted = 0.0;
    for (int i = 0; i < n; ++i) weighted += trace.weights[i] * dw[i];
    std::vector<double> dlogits(n);
    for (int i = 0; i < n; ++i) dlogits[i] = trace.weights[i] * (dw[i] - weighted);

    auto dhidden = nn::affine_backward(trace.hidden_act, dlogits, params_[fc2_w_].value,
                                       param_grads[fc2_w_], param_grads[fc2_b_]);
    for (std::size_t k = 0; k < dhidden.size(); ++k) {
      if (!(trace.hidden_pre[k] > 0.0)) dhidden[k] = 0.0;
    }
    const auto dcontext = nn::affine_backward(trace.context, dhidden, params_[fc1_w_].value,
                                              param_grads[fc1_w_], param_grads[fc1_b_]);
    const double inv_plane = 1.0 / static_cast<double>(s * s);
    for (int i = 0; i < n; ++i) {
      dh[i] = upstream;
      auto d = dh[i].values();
      for (auto& v : d) v *= trace.weights[i];
      for (int ch = 0; ch < c; ++ch) {
        const double pooled_grad = dcontext[static_cast<std::size_t>(i) * c + ch] * inv_plane;
        auto plane = dh[i].channel(ch);
        for (auto& v : plane) v += pooled_grad;
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    const auto& lt = trace.layers[i];
    const auto& sl = slots_[i];
    Tensor dup(lt.upsampled.shape());
    Tensor* dup_ptr = input_grads != nullptr ? &dup : nullptr;
    if (config_.arch == Arch::kVanilla) {
      run_conv_backward(sl.ext, lt.upsampled, dh[i], param_grads, dup_ptr);
    } else {
      run_conv_backward(sl.skip, lt.upsampled, dh[i], param_grads, dup_ptr);
      Tensor dact2(lt.act2.shape());
      run_conv_backward(sl.conv3, lt.act2, dh[i], param_grads, &dact2);
      const Tensor dpre2 = nn::relu_backward(lt.pre2, dact2);
      Tensor dact1(lt.act1.shape());
      run_conv_backward(sl.conv2, lt.act1, dpre2, param_grads, &dact1);
      const Tensor dpre1 = nn::relu_backward(lt.pre1, dact1);
      run_conv_backward(sl.conv1, lt.upsampled, dpre1, param_grads, dup_ptr);
    }
    if (input_grads != nullptr) (*input_grads)[i] = nn::upsample_backward(dup, lt.input_shape);
  }
}

AggregatedFeature AggregatorModel::aggregate(const FeatureStack& stack) const {
  validate_stack(stack, config_.layer_spec, "aggregate");
  std::vector<Tensor> inputs;
  inputs.reserve(stack.layers.size());
  for (const auto& l : stack.layers) inputs.push_back(to_double(l.map));
  return {forward(inputs)};
}

Tensor upsample(const Tensor& map, int target) { return nn::upsample(map, target); }

namespace {

AggregatedFeature forward_as(Arch expected, const AggregatorModel& model, const FeatureStack& stack) {
  if (model.arch() != expected) {
    throw InvalidArgument("model architecture is " + to_string(model.arch()) + ", not " +
                          to_string(expected));
  }
  return model.aggregate(stack);
}

}  // namespace

AggregatedFeature forward_va(const AggregatorModel& model, const FeatureStack& stack) {
  return forward_as(Arch::kVanilla, model, stack);
}

AggregatedFeature forward_na(const AggregatorModel& model, const FeatureStack& stack) {
  return forward_as(Arch::kNonlinear, model, stack);
}

AggregatedFeature forward_cwa(const AggregatorModel& model, const FeatureStack& stack) {
  return forward_as(Arch::kContextWeighted, model, stack);
}

std::vector<double> context_weights(const AggregatorModel& model,
                                    const std::vector<std::vector<double>>& pooled) {
  return model.context_weights(pooled);
}

std::size_t count_params(const AggregatorModel& model) { return model.count_params(); }

nlohmann::json config_json(const AggregatorConfig& config) {
  nlohmann::json spec = nlohmann::json::array();
  for (const auto& s : config.layer_spec) spec.push_back(shape_json(s));
  return {{"version", 1},
          {"arch", to_string(config.arch)},
          {"n", config.layer_spec.size()},
          {"C", config.channels},
          {"S", config.resolution},
          {"C_mid", config.mid_channels},
          {"hidden", config.hidden},
          {"layer_spec", std::move(spec)},
          {"seed", config.seed}};
}

AggregatorConfig parse_config_json(const nlohmann::json& doc) {
  const std::string ctx = "model.json";
  try {
    if (require_key(doc, "version", ctx).get<int>() != 1) {
      throw VersionMismatch("model.json version " + doc.at("version").dump() + " is not supported");
    }
    AggregatorConfig config;
    config.arch = parse_arch(require_key(doc, "arch", ctx).get<std::string>());
    config.channels = require_key(doc, "C", ctx).get<int>();
    config.resolution = require_key(doc, "S", ctx).get<int>();
    config.mid_channels = require_key(doc, "C_mid", ctx).get<int>();
    config.hidden = require_key(doc, "hidden", ctx).get<int>();
    config.seed = require_key(doc, "seed", ctx).get<std::uint64_t>();
    for (const auto& s : require_key(doc, "layer_spec", ctx)) {
      config.layer_spec.push_back(parse_shape(s, ctx));
    }
    if (require_key(doc, "n", ctx).get<std::size_t>() != config.layer_spec.size()) {
      throw FormatError("model.json: n disagrees with layer_spec");
    }
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model.json: ") + e.what());
  }
}

void save_model(const AggregatorModel& model, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  write_json(dir / "model.json", config_json(model.config()));
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    const std::string file = "param_" + p.name + ".bin";
    write_blob(dir / file, std::span<const double>(p.value));
    layers.push_back({{"name", p.name}, {"shape", p.shape}, {"dtype", "f64le"}, {"file", file}});
  }
  write_json(dir / "manifest.json", {{"version", 1}, {"timestep", 0}, {"layers", std::move(layers)}});
}

AggregatorModel load_model(const fs::path& dir) {
  if (!fs::is_regular_file(dir / "model.json")) {
    throw FormatError("'" + (dir / "model.json").string() + "' not found");
  }
  const AggregatorConfig config = parse_config_json(read_json(dir / "model.json"));
  AggregatorModel model(config);
  if (!(model.config() == config)) {
    throw FormatError("model.json does not hold a resolved configuration");
  }
  const auto manifest = read_json(dir / "manifest.json");
  const std::string ctx = "model manifest";
  try {
    if (require_key(manifest, "version", ctx).get<int>() != 1) {
      throw VersionMismatch("model manifest version is not supported");
    }
    const auto& layers = require_key(manifest, "layers", ctx);
    if (layers.size() != model.parameters().size()) {
      throw ShapeMismatch("checkpoint has " + std::to_string(layers.size()) +
                          " parameters, layer_spec implies " +
                          std::to_string(model.parameters().size()));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& p = model.parameters()[i];
      const auto& entry = layers[i];
      const std::string name = require_key(entry, "name", ctx).get<std::string>();
      const auto shape = require_key(entry, "shape", ctx).get<std::vector<int>>();
      if (name != p.name || shape != p.shape) {
        throw ShapeMismatch("checkpoint parameter '" + name + "' does not match '" + p.name +
                            "' implied by layer_spec");
      }
      if (require_key(entry, "dtype", ctx).get<std::string>() != "f64le") {
        throw ShapeMismatch("parameter '" + name + "' must be stored as f64le");
      }
      p.value = read_blob_f64(dir / require_key(entry, "file", ctx).get<std::string>(),
                              p.value.size(), name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(ctx + ": " + e.what());
  }
  return model;
}

}  // namespace posefuse
