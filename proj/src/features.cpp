#include "posefuse/features.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "posefuse/blob_io.hpp"
#include "posefuse/error.hpp"

namespace posefuse {

namespace fs = std::filesystem;

ImagePatch::ImagePatch(int size, float fill) : size_(size) {
  if (size < 1) throw InvalidArgument("image size must be positive");
  if (!(fill >= 0.0f && fill <= 1.0f)) throw InvalidArgument("pixel values must lie in [0, 1]");
  pixels_.assign(static_cast<std::size_t>(size) * size * 3, fill);
}

ImagePatch::ImagePatch(int size, std::vector<float> pixels) : size_(size), pixels_(std::move(pixels)) {
  if (size < 1) throw InvalidArgument("image size must be positive");
  if (pixels_.size() != static_cast<std::size_t>(size) * size * 3) {
    throw ShapeMismatch("image buffer does not match " + std::to_string(size) + "x" +
                        std::to_string(size) + "x3");
  }
  if (!std::all_of(pixels_.begin(), pixels_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; })) {
    throw InvalidArgument("pixel values must lie in [0, 1]");
  }
}

std::vector<Shape3> FeatureStack::shapes() const {
  std::vector<Shape3> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.map.shape());
  return out;
}

void validate_stack(const FeatureStack& stack, std::span<const Shape3> expected,
                    const std::string& context) {
  if (stack.layers.empty()) throw InvalidArgument(context + ": feature stack is empty");
  if (stack.layers.size() != expected.size()) {
    throw ShapeMismatch(context + ": expected " + std::to_string(expected.size()) +
                        " layers, got " + std::to_string(stack.layers.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& got = stack.layers[i].map.shape();
    if (!(got == expected[i])) {
      throw ShapeMismatch(context + ": layer " + std::to_string(i) + " ('" +
                          stack.layers[i].name + "') has shape " + to_string(got) +
                          ", expected " + to_string(expected[i]));
    }
    if (!all_finite(stack.layers[i].map.values())) {
      throw InvalidArgument(context + ": layer '" + stack.layers[i].name + "' has non-finite values");
    }
  }
}

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.empty()) throw InvalidArgument("noise schedule is empty");
  if (!(alpha_bar_[0] > 0.99)) throw InvalidArgument("alpha_bar[0] must exceed 0.99");
  for (std::size_t t = 0; t < alpha_bar_.size(); ++t) {
    if (!(alpha_bar_[t] > 0.0 && alpha_bar_[t] <= 1.0)) {
      throw InvalidArgument("alpha_bar values must lie in (0, 1]");
    }
    if (t > 0 && alpha_bar_[t] > alpha_bar_[t - 1]) {
      throw InvalidArgument("alpha_bar must be non-increasing");
    }
  }
}

NoiseSchedule NoiseSchedule::linear(int num_steps, double beta_start, double beta_end) {
  if (num_steps < 1) throw InvalidArgument("schedule needs at least one step");
  std::vector<double> alpha_bar(static_cast<std::size_t>(num_steps) + 1);
  alpha_bar[0] = 1.0;
  double cumulative = 1.0;
  for (int s = 1; s <= num_steps; ++s) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(s - 1) / (num_steps - 1);
    const double beta = beta_start + frac * (beta_end - beta_start);
    cumulative *= 1.0 - beta;
    alpha_bar[s] = cumulative;
  }
  return NoiseSchedule(std::move(alpha_bar));
}

namespace {

template <typename T>
std::vector<T> ddim_noise_impl(std::span<const T> x0, int t, const NoiseSchedule& schedule,
                               std::uint64_t seed) {
  if (t < 0 || t > schedule.num_steps()) {
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(schedule.num_steps()) + "]");
  }
  std::vector<T> out(x0.begin(), x0.end());
  if (t == 0) return out;
  const double a = schedule.alpha_bar(t);
  const double signal = std::sqrt(a);
  const double noise = std::sqrt(1.0 - a);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : out) v = static_cast<T>(signal * static_cast<double>(v) + noise * normal(rng));
  return out;
}

}  // namespace

std::vector<double> ddim_noise(std::span<const double> x0, int t, const NoiseSchedule& schedule,
                               std::uint64_t seed) {
  return ddim_noise_impl(x0, t, schedule, seed);
}

std::vector<float> ddim_noise(std::span<const float> x0, int t, const NoiseSchedule& schedule,
                              std::uint64_t seed) {
  return ddim_noise_impl(x0, t, schedule, seed);
}

std::vector<Shape3> FeatureProvider::layer_shapes() const {
  std::vector<Shape3> out;
  for (const auto& l : layers()) out.push_back(l.shape);
  return out;
}

FeatureStack provider_extract(const FeatureProvider& provider, const ProviderInput& input,
                              int timestep, std::uint64_t seed) {
  if (timestep < 0 || timestep > provider.max_timestep()) {
    throw InvalidArgument("timestep " + std::to_string(timestep) +
                          " outside the provider's schedule");
  }
  FeatureStack stack = provider.extract(input, timestep, seed);
  const auto expected = provider.layer_shapes();
  validate_stack(stack, expected, "provider output");
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    if (stack.layers[i].name != provider.layers()[i].name) {
      throw ShapeMismatch("provider output layer " + std::to_string(i) + " is '" +
                          stack.layers[i].name + "', declared '" + provider.layers()[i].name + "'");
    }
    if (!all_finite(stack.layers[i].map.values())) {
      throw NumericalFailure("provider output layer '" + stack.layers[i].name +
                             "' has non-finite values");
    }
  }
  stack.timestep = timestep;
  return stack;
}

FixtureManifest fixture_save(const FeatureStack& stack, const fs::path& dir) {
  if (stack.layers.empty()) throw InvalidArgument("cannot save an empty feature stack");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  FixtureManifest manifest;
  manifest.timestep = stack.timestep;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    const auto& layer = stack.layers[i];
    const std::string file = "layer_" + std::to_string(i) + ".bin";
    write_blob(dir / file, layer.map.values());
    manifest.layers.push_back({layer.name, layer.map.shape()});
    manifest.files.push_back(file);
    layers.push_back({{"name", layer.name},
                      {"shape", shape_json(layer.map.shape())},
                      {"dtype", to_string(DType::kF32Le)},
                      {"file", file}});
  }
  nlohmann::json doc = {{"version", manifest.version},
                        {"timestep", manifest.timestep},
                        {"layers", std::move(layers)}};
  write_json(dir / "manifest.json", doc);
  return manifest;
}

FeatureStack fixture_load(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::is_regular_file(manifest_path)) {
    throw FormatError("corrupt manifest: '" + manifest_path.string() + "' not found");
  }
  nlohmann::json doc;
  try {
    doc = read_json(manifest_path);
  } catch (const FormatError& e) {
    throw FormatError(std::string("corrupt manifest: ") + e.what());
  }
  const std::string ctx = "corrupt manifest '" + manifest_path.string() + "'";
  FeatureStack stack;
  try {
    if (require_key(doc, "version", ctx).get<int>() != 1) {
      throw FormatError(ctx + ": unsupported version");
    }
    stack.timestep = require_key(doc, "timestep", ctx).get<int>();
    const auto& layers = require_key(doc, "layers", ctx);
    if (!layers.is_array() || layers.empty()) throw FormatError(ctx + ": no layers");
    for (const auto& entry : layers) {
      const std::string name = require_key(entry, "name", ctx).get<std::string>();
      const Shape3 shape = parse_shape(require_key(entry, "shape", ctx), ctx);
      const std::string dtype = require_key(entry, "dtype", ctx).get<std::string>();
      const std::string file = require_key(entry, "file", ctx).get<std::string>();
      if (dtype != "f32le") {
        throw ShapeMismatch("layer '" + name + "': dtype '" + dtype + "', expected f32le");
      }
      auto values = read_blob_f32(dir / file, shape.size(), name);
      stack.layers.push_back({name, FeatureMap(shape, std::move(values))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(ctx + ": " + e.what());
  }
  return stack;
}

FixtureProvider::FixtureProvider(std::vector<LayerInfo> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("fixture provider needs at least one layer");
}

FeatureStack FixtureProvider::extract(const ProviderInput& input, int timestep,
                                      std::uint64_t) const {
  const auto* ref = std::get_if<FixtureRef>(&input);
  if (ref == nullptr) throw InvalidArgument("fixture provider expects a fixture directory");
  FeatureStack stack = fixture_load(ref->dir);
  if (stack.timestep != timestep) {
    throw InvalidArgument("fixture '" + ref->dir.string() + "' was extracted at timestep " +
                          std::to_string(stack.timestep));
  }
  return stack;
}

DiffusionBackboneProvider::DiffusionBackboneProvider(
    std::shared_ptr<const DiffusionBackbone> backbone, std::vector<LayerInfo> declared_layers,
    NoiseSchedule schedule, NoisePolicy policy)
    : backbone_(std::move(backbone)),
      layers_(std::move(declared_layers)),
      schedule_(std::move(schedule)),
      policy_(policy) {
  if (layers_.empty()) throw InvalidArgument("backbone provider needs declared layers");
}

FeatureStack DiffusionBackboneProvider::extract(const ProviderInput& input, int timestep,
                                                std::uint64_t seed) const {
  if (!backbone_) throw BackboneUnavailable("diffusion backbone is not loaded");
  const auto* image = std::get_if<ImagePatch>(&input);
  if (image == nullptr) throw InvalidArgument("backbone provider expects an image patch");

  const FeatureMap latent = backbone_->encode(*image);
  FeatureMap noisy = latent;
  if (timestep > 0 && policy_ == NoisePolicy::kAddNoise) {
    noisy = FeatureMap(latent.shape(), ddim_noise(latent.values(), timestep, schedule_, seed));
  }
  TextEmbedding embedding = backbone_->empty_prompt_embedding();
  embedding.unconditioned = true;
  FeatureStack stack;
  stack.layers = backbone_->unet_forward(noisy, timestep, embedding);
  stack.timestep = timestep;
  validate_stack(stack, layer_shapes(), "backbone activations");
  return stack;
}

}  // namespace posefuse
