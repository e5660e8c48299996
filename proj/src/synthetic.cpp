#include "posefuse/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include "posefuse/error.hpp"

namespace posefuse {

namespace {

constexpr int kBasisTerms = 10;  // appearance + 9 rotation entries
constexpr std::uint64_t kTagSignalMix = 1;
constexpr std::uint64_t kTagNuisanceMix = 2;
constexpr std::uint64_t kTagClassCoeff = 3;
constexpr std::uint64_t kTagClassField = 4;
constexpr std::uint64_t kTagNoise = 5;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int signal_rank(int channels) { return std::max(1, channels / 2); }
int nuisance_rank(int channels) { return std::max(1, channels / 4); }

// channels × rank matrix with N(0, 1/rank) entries, so a unit-variance code maps
// to unit-variance channels.
std::vector<double> mixing_matrix(std::uint64_t seed, int channels, int rank) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
  std::vector<double> m(static_cast<std::size_t>(channels) * rank);
  for (auto& v : m) v = normal(rng);
  return m;
}

// Smooth field on the unit square: 0.6 + 0.4·cos(2π(fy·y + fx·x) + phase), low frequencies.
struct SpatialField {
  double fy, fx, phase;
  double operator()(double y, double x) const {
    return 0.6 + 0.4 * std::cos(2.0 * std::numbers::pi * (fy * y + fx * x) + phase);
  }
};

SpatialField random_field(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> freq(-1, 1);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  return {static_cast<double>(freq(rng)), static_cast<double>(freq(rng)), phase(rng)};
}

FeatureMap synthesize_layer(int class_id, const std::array<double, kBasisTerms>& gains,
                            const Shape3& shape, int layer, double noise_level,
                            std::uint64_t seed, const SyntheticWorldParams& params,
                            const std::optional<NormalizedRect>& occlusion) {
  const int channels = shape.channels;
  const int ds = signal_rank(channels);
  const int dn = nuisance_rank(channels);
  const auto cls = static_cast<std::uint64_t>(class_id);
  const auto li = static_cast<std::uint64_t>(layer);

  const auto psig = mixing_matrix(mix_seed(params.basis_seed, kTagSignalMix, li), channels, ds);

  // Per-class codes a_k (ds-vectors) and spatial fields φ_k.
  std::vector<double> codes(static_cast<std::size_t>(kBasisTerms) * ds);
  std::vector<SpatialField> fields;
  {
    std::mt19937_64 rng(mix_seed(params.basis_seed, kTagClassCoeff, cls, li));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : codes) v = normal(rng);
    std::mt19937_64 frng(mix_seed(params.basis_seed, kTagClassField, cls, li));
    for (int k = 0; k < kBasisTerms; ++k) fields.push_back(random_field(frng));
  }

  std::vector<double> values(shape.size(), 0.0);
  std::vector<double> code(ds);
  for (int y = 0; y < shape.height; ++y) {
    const double py = (y + 0.5) / shape.height;
    for (int x = 0; x < shape.width; ++x) {
      const double px = (x + 0.5) / shape.width;
      std::fill(code.begin(), code.end(), 0.0);
      for (int k = 0; k < kBasisTerms; ++k) {
        const double w = gains[k] * fields[k](py, px);
        for (int j = 0; j < ds; ++j) code[j] += w * codes[k * ds + j];
      }
      for (int c = 0; c < channels; ++c) {
        double v = 0.0;
        for (int j = 0; j < ds; ++j) v += psig[c * ds + j] * code[j];
        values[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x] = v;
      }
    }
  }

  if (noise_level > 0.0) {
    // Structured part: a per-image low-rank code, slowly varying over space, shared
    // mixing across classes. Unstructured part: i.i.d. per element.
    const auto pn = mixing_matrix(mix_seed(params.basis_seed, kTagNuisanceMix, li), channels, dn);
    std::mt19937_64 rng(mix_seed(seed, kTagNoise, li));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> base(dn), slope_y(dn), slope_x(dn);
    for (int j = 0; j < dn; ++j) {
      base[j] = normal(rng);
      slope_y[j] = 0.5 * normal(rng);
      slope_x[j] = 0.5 * normal(rng);
    }
    // Normalize the code to unit variance on average; slopes add 2·(0.5²)/12 per axis.
    const double code_scale = 1.0 / std::sqrt(1.0 + 2.0 * 0.25 / 12.0);
    const double structured = noise_level * std::sqrt(params.nuisance_share) * code_scale;
    const double iid = noise_level * std::sqrt(1.0 - params.nuisance_share);
    for (int y = 0; y < shape.height; ++y) {
      const double py = (y + 0.5) / shape.height - 0.5;
      for (int x = 0; x < shape.width; ++x) {
        const double px = (x + 0.5) / shape.width - 0.5;
        for (int c = 0; c < channels; ++c) {
          double v = 0.0;
          for (int j = 0; j < dn; ++j) v += pn[c * dn + j] * (base[j] + slope_y[j] * py + slope_x[j] * px);
          values[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x] +=
              structured * v + iid * normal(rng);
        }
      }
    }
  }

  if (occlusion) {
    for (int y = 0; y < shape.height; ++y) {
      const double py = (y + 0.5) / shape.height;
      for (int x = 0; x < shape.width; ++x) {
        const double px = (x + 0.5) / shape.width;
        if (!occlusion->contains(py, px)) continue;
        for (int c = 0; c < channels; ++c) {
          values[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x] = 0.0;
        }
      }
    }
  }

  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>(values[i]);
  return FeatureMap(shape, std::move(out));
}

FeatureStack synthesize(int class_id, const Rotation3& pose, const std::vector<Shape3>& layer_spec,
                        double noise_level, std::uint64_t seed, const SyntheticWorldParams& params,
                        const std::optional<NormalizedRect>& occlusion) {
  if (layer_spec.empty()) throw InvalidArgument("layer_spec must be non-empty");
  if (!(noise_level >= 0.0)) throw InvalidArgument("noise_level must be >= 0");
  if (class_id < 0) throw InvalidArgument("class_id must be non-negative");
  std::array<double, kBasisTerms> gains{};
  gains[0] = params.appearance_gain;
  const auto r = pose.row_major();
  for (int k = 0; k < 9; ++k) gains[k + 1] = params.pose_gain * r[k];

  FeatureStack stack;
  const auto names = synthetic_layer_info(layer_spec);
  for (std::size_t i = 0; i < layer_spec.size(); ++i) {
    stack.layers.push_back({names[i].name,
                            synthesize_layer(class_id, gains, layer_spec[i], static_cast<int>(i),
                                             noise_level, seed, params, occlusion)});
  }
  return stack;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  std::uint64_t h = splitmix(a);
  h = splitmix(h ^ b);
  h = splitmix(h ^ c);
  h = splitmix(h ^ d);
  return h;
}

std::vector<LayerInfo> synthetic_layer_info(const std::vector<Shape3>& layer_spec) {
  std::vector<LayerInfo> out;
  for (std::size_t i = 0; i < layer_spec.size(); ++i) {
    out.push_back({"syn" + std::to_string(i), layer_spec[i]});
  }
  return out;
}

FeatureStack synthetic_extract(int class_id, const Rotation3& pose,
                               const std::vector<Shape3>& layer_spec, double noise_level,
                               std::uint64_t seed, const SyntheticWorldParams& params) {
  return synthesize(class_id, pose, layer_spec, noise_level, seed, params, std::nullopt);
}

SyntheticProvider::SyntheticProvider(std::vector<Shape3> layer_spec, SyntheticWorldParams params,
                                     NoiseSchedule schedule, NoisePolicy policy)
    : spec_(std::move(layer_spec)),
      layers_(synthetic_layer_info(spec_)),
      params_(params),
      schedule_(std::move(schedule)),
      policy_(policy) {
  if (spec_.empty()) throw InvalidArgument("layer_spec must be non-empty");
}

FeatureStack SyntheticProvider::extract(const ProviderInput& input, int timestep,
                                        std::uint64_t seed) const {
  const auto* view = std::get_if<SyntheticView>(&input);
  if (view == nullptr) throw InvalidArgument("synthetic provider expects a synthetic view");
  FeatureStack stack = synthesize(view->class_id, view->pose, spec_, view->noise_level, seed,
                                  params_, view->occlusion);
  if (timestep > 0 && policy_ == NoisePolicy::kAddNoise) {
    for (std::size_t i = 0; i < stack.layers.size(); ++i) {
      auto& map = stack.layers[i].map;
      map = FeatureMap(map.shape(),
                       ddim_noise(map.values(), timestep, schedule_, mix_seed(seed, 0xdd1, i)));
    }
  }
  stack.timestep = timestep;
  return stack;
}

}  // namespace posefuse
