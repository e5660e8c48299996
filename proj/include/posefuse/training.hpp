#pragma once

// Contrastive (InfoNCE) training of an AggregatorModel against template features.
// Provider features are inputs only; nothing upstream of the model is updated.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "posefuse/aggregation.hpp"
#include "posefuse/error.hpp"
#include "posefuse/features.hpp"
#include "posefuse/geometry.hpp"
#include "posefuse/matching.hpp"

namespace posefuse {

struct TrainSample {
  FeatureStack query_stack;
  ClassLabel gt_class;
  Pose gt_pose;
};

/// One positive and M−1 negative template ids for a query.
struct PairBatch {
  int positive = 0;
  std::vector<int> negatives;
};

/// Same-class templates within this geodesic distance never serve as negatives.
inline constexpr double kNegativeMinDistance = 15.0 / 180.0;

struct TrainConfig {
  Arch arch = Arch::kContextWeighted;
  int epochs = 20;
  double learning_rate = 1e-3;
  double tau = 0.1;
  int M = 8;
  double delta = kDefaultDelta;
  std::uint64_t seed = 0;
  int batch_size = 8;

  /// Throws InvalidArgument on out-of-range fields.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json train_config_json(const TrainConfig& config);
TrainConfig parse_train_config_json(const nlohmann::json& doc);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::uint64_t step = 0;
  Gradients m, v;  // per-parameter first/second moments
};

/// In-place Adam update with bias correction.
void adam_step(std::vector<Parameter>& params, const Gradients& grads, AdamState& state,
               double learning_rate);

struct LossRecord {
  int epoch = 0;
  int batch = 0;
  double loss = 0.0;
  bool operator==(const LossRecord&) const = default;
};

struct Checkpoint {
  AggregatorModel model;
  AdamState optimizer;
  TrainConfig config;
  int epoch = 0;  // completed epochs
  std::vector<LossRecord> history;
};

/// Thrown when a batch loss is non-finite; carries the state at the last completed epoch.
class TrainingDiverged : public NumericalFailure {
 public:
  TrainingDiverged(const std::string& message, Checkpoint last_good)
      : NumericalFailure(message), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const noexcept { return last_good_; }

 private:
  Checkpoint last_good_;
};

/// Positive: same-class template with the smallest geodesic distance to the ground
/// truth (lowest id on ties). Negatives: M−1 drawn without replacement from same-class
/// templates farther than kNegativeMinDistance and all other-class templates, never
/// including the positive itself.
/// Only the templates' ids, classes and poses are consulted.
PairBatch build_pairs(const ClassLabel& gt_class, const Rotation3& gt_rotation,
                      const std::vector<TemplateSource>& templates, int M, std::uint64_t seed);
PairBatch build_pairs(const TrainSample& sample, const TemplateGallery& gallery, int M,
                      std::uint64_t seed);

/// −log(exp(pos/τ) / (exp(pos/τ) + Σ exp(neg_k/τ))), max-subtracted.
double infonce_loss(double pos_score, std::span<const double> neg_scores, double tau);
/// Loss value; writes dL/dpos and dL/dneg_k.
double infonce_grad(double pos_score, std::span<const double> neg_scores, double tau,
                    double& d_pos, std::vector<double>& d_neg);

struct TrainHooks {
  /// Called at the start of each epoch with the gallery refreshed from current params.
  std::function<void(int epoch, const TemplateGallery& gallery)> on_epoch_gallery;
  /// Called after each batch update.
  std::function<void(const LossRecord&)> on_batch;
};

/// Runs config.epochs epochs over shuffled batches. With `resume`, continues from its
/// completed epoch count; the result is bitwise identical to an uninterrupted run.
Checkpoint train(const std::vector<TrainSample>& dataset,
                 const std::vector<TemplateSource>& templates,
                 const AggregatorConfig& model_config, const TrainConfig& config,
                 const Checkpoint* resume = nullptr, const TrainHooks& hooks = {});

/// Model container plus adam_m/adam_v blobs (f64le), train_state.json and loss.csv.
void checkpoint_save(const Checkpoint& checkpoint, const std::filesystem::path& dir);
/// Throws VersionMismatch for an unsupported train_state version and
/// FingerprintMismatch when `expected_layer_spec` is given and disagrees, or when the
/// stored model fingerprint does not match the loaded parameters.
Checkpoint checkpoint_load(const std::filesystem::path& dir,
                           const std::optional<std::vector<Shape3>>& expected_layer_spec = std::nullopt);

}  // namespace posefuse
