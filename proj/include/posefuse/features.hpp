#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "posefuse/geometry.hpp"
#include "posefuse/tensor.hpp"

namespace posefuse {

/// Square RGB crop with values in [0, 1], stored H×W×3 interleaved.
class ImagePatch {
 public:
  static constexpr int kDefaultSize = 512;

  explicit ImagePatch(int size = kDefaultSize, float fill = 0.0f);
  ImagePatch(int size, std::vector<float> pixels);

  int size() const noexcept { return size_; }
  std::span<const float> pixels() const noexcept { return pixels_; }
  float& at(int y, int x, int ch) noexcept { return pixels_[(y * size_ + x) * 3 + ch]; }

 private:
  int size_;
  std::vector<float> pixels_;
};

struct FeatureLayer {
  std::string name;
  FeatureMap map;

  bool operator==(const FeatureLayer&) const = default;
};

/// Per-layer feature maps in the provider's fixed order.
struct FeatureStack {
  std::vector<FeatureLayer> layers;
  int timestep = 0;

  std::vector<Shape3> shapes() const;
  bool operator==(const FeatureStack&) const = default;
};

/// Throws ShapeMismatch (or InvalidArgument for an empty/non-finite stack) unless
/// `stack` has exactly `expected` layer shapes in order.
void validate_stack(const FeatureStack& stack, std::span<const Shape3> expected,
                    const std::string& context);

/// Cumulative ᾱ_t for t = 0..T, non-increasing, in (0, 1] with ᾱ_0 > 0.99.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> alpha_bar);

  /// ᾱ_t = ∏_{s≤t}(1 − β_s) with β linear in [beta_start, beta_end] over T steps.
  static NoiseSchedule linear(int num_steps = 1000, double beta_start = 0.00085,
                              double beta_end = 0.012);

  int num_steps() const noexcept { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int t) const { return alpha_bar_.at(static_cast<std::size_t>(t)); }

 private:
  std::vector<double> alpha_bar_;
};

/// x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε with ε ~ N(0,1) drawn from `seed`. t = 0 returns x0 unchanged.
std::vector<double> ddim_noise(std::span<const double> x0, int t, const NoiseSchedule& schedule,
                               std::uint64_t seed);
std::vector<float> ddim_noise(std::span<const float> x0, int t, const NoiseSchedule& schedule,
                              std::uint64_t seed);

/// What happens to a provider's input when extraction runs at t > 0.
enum class NoisePolicy {
  kAddNoise,       // noise the input with ddim_noise before the forward pass
  kTimestepOnly,   // only pass t to the network, input stays clean
};

struct LayerInfo {
  std::string name;
  Shape3 shape;
};

/// Axis-aligned rectangle in normalized [0,1] image coordinates.
struct NormalizedRect {
  double y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  bool contains(double y, double x) const noexcept { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

/// Input for the synthetic provider: the view it stands in for.
struct SyntheticView {
  int class_id = 0;
  Rotation3 pose;
  double noise_level = 0.0;
  std::optional<NormalizedRect> occlusion;
};

/// Input for the fixture provider: a saved feature directory.
struct FixtureRef {
  std::filesystem::path dir;
};

using ProviderInput = std::variant<ImagePatch, SyntheticView, FixtureRef>;

/// Maps an input to a per-layer FeatureStack. Implementations are immutable after
/// construction and must be deterministic given (input, timestep, seed).
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual const std::vector<LayerInfo>& layers() const = 0;
  virtual int max_timestep() const = 0;
  virtual FeatureStack extract(const ProviderInput& input, int timestep,
                               std::uint64_t seed) const = 0;

  std::vector<Shape3> layer_shapes() const;
};

/// Runs `provider` and checks the result against its declared layers; records `timestep`.
FeatureStack provider_extract(const FeatureProvider& provider, const ProviderInput& input,
                              int timestep, std::uint64_t seed);

// Fixture directories: manifest.json + one raw f32le blob per layer.

struct FixtureManifest {
  int version = 1;
  int timestep = 0;
  std::vector<LayerInfo> layers;
  std::vector<std::string> files;
};

FixtureManifest fixture_save(const FeatureStack& stack, const std::filesystem::path& dir);
/// Errors: FormatError for a corrupt manifest, ShapeMismatch for shape/dtype
/// disagreement, MissingLayer naming the layer whose blob is absent.
FeatureStack fixture_load(const std::filesystem::path& dir);

class FixtureProvider final : public FeatureProvider {
 public:
  explicit FixtureProvider(std::vector<LayerInfo> layers);

  const std::vector<LayerInfo>& layers() const override { return layers_; }
  int max_timestep() const override { return std::numeric_limits<int>::max(); }
  FeatureStack extract(const ProviderInput& input, int timestep,
                       std::uint64_t seed) const override;

 private:
  std::vector<LayerInfo> layers_;
};

/// Text encoder output handed to the UNet.
struct TextEmbedding {
  std::vector<float> values;
  bool unconditioned = false;
};

/// Frozen diffusion backbone: image encoder plus a UNet whose intermediate
/// activations are exposed in a documented order.
class DiffusionBackbone {
 public:
  virtual ~DiffusionBackbone() = default;
  virtual std::vector<LayerInfo> layers() const = 0;
  virtual FeatureMap encode(const ImagePatch& image) const = 0;
  /// Embedding of the empty prompt.
  virtual TextEmbedding empty_prompt_embedding() const = 0;
  virtual std::vector<FeatureLayer> unet_forward(const FeatureMap& latent, int timestep,
                                                 const TextEmbedding& embedding) const = 0;
};

/// Adapter exposing a diffusion backbone as a FeatureProvider: one UNet pass per
/// extract call with the unconditioned embedding. Without a backbone, extract throws
/// BackboneUnavailable; activations disagreeing with the declared layers throw
/// ShapeMismatch.
class DiffusionBackboneProvider final : public FeatureProvider {
 public:
  DiffusionBackboneProvider(std::shared_ptr<const DiffusionBackbone> backbone,
                            std::vector<LayerInfo> declared_layers, NoiseSchedule schedule,
                            NoisePolicy policy = NoisePolicy::kAddNoise);

  const std::vector<LayerInfo>& layers() const override { return layers_; }
  int max_timestep() const override { return schedule_.num_steps(); }
  FeatureStack extract(const ProviderInput& input, int timestep,
                       std::uint64_t seed) const override;

 private:
  std::shared_ptr<const DiffusionBackbone> backbone_;
  std::vector<LayerInfo> layers_;
  NoiseSchedule schedule_;
  NoisePolicy policy_;
};

}  // namespace posefuse
