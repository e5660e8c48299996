#pragma once

// Desk-scale stand-in for a diffusion backbone: features are a smooth function of
// (class, pose) built from seeded random bases, plus structured zero-mean noise.

#include <cstdint>
#include <vector>

#include "posefuse/features.hpp"

namespace posefuse {

struct SyntheticWorldParams {
  std::uint64_t basis_seed = 0;
  /// Weight of the pose-independent appearance term per class.
  double appearance_gain = 0.2;
  /// Weight of the rotation-modulated terms.
  double pose_gain = 0.05;
  /// Fraction of noise variance living in the shared low-rank nuisance subspace;
  /// the remainder is i.i.d. per element.
  double nuisance_share = 0.99;
};

/// Per element (c, y, x) of layer i:
///   signal = Σ_j Psig_i[c][j] · Σ_k g_k(R) · a_{class,i,k}[j] · φ_{class,i,k}(y, x)
/// with g_0 = appearance_gain and g_{1..9} = pose_gain · R (row-major), Psig_i a mixing
/// matrix shared by all classes, and φ smooth spatial fields. Noise of RMS amplitude
/// `noise_level` is drawn from `seed`.
FeatureStack synthetic_extract(int class_id, const Rotation3& pose,
                               const std::vector<Shape3>& layer_spec, double noise_level,
                               std::uint64_t seed, const SyntheticWorldParams& params = {});

class SyntheticProvider final : public FeatureProvider {
 public:
  SyntheticProvider(std::vector<Shape3> layer_spec, SyntheticWorldParams params = {},
                    NoiseSchedule schedule = NoiseSchedule::linear(),
                    NoisePolicy policy = NoisePolicy::kAddNoise);

  const std::vector<LayerInfo>& layers() const override { return layers_; }
  int max_timestep() const override { return schedule_.num_steps(); }
  /// Accepts SyntheticView inputs only.
  FeatureStack extract(const ProviderInput& input, int timestep,
                       std::uint64_t seed) const override;

  const SyntheticWorldParams& params() const noexcept { return params_; }

 private:
  std::vector<Shape3> spec_;
  std::vector<LayerInfo> layers_;
  SyntheticWorldParams params_;
  NoiseSchedule schedule_;
  NoisePolicy policy_;
};

/// Layer names used by the synthetic provider ("syn0", "syn1", ...).
std::vector<LayerInfo> synthetic_layer_info(const std::vector<Shape3>& layer_spec);

/// SplitMix64-style mixing of seed components into one seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0, std::uint64_t d = 0);

}  // namespace posefuse
