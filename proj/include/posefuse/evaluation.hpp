#pragma once

// Acc15 reports over seen/unseen splits, VSD error/recall and PCA visualization.

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "posefuse/aggregation.hpp"
#include "posefuse/matching.hpp"
#include "posefuse/training.hpp"

namespace posefuse {

struct EvalSample {
  TrainSample sample;
  std::string split;
  bool seen = true;
};

struct EvalRow {
  std::string split_name;  // a split, "seen", "unseen" or "overall"
  std::string membership;  // "seen", "unseen" or "all"
  std::size_t n_samples = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;
};

struct SampleOutcome {
  int template_id = 0;
  double score = 0.0;
  int correct = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<SampleOutcome> outcomes;  // dataset order
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t model_fingerprint = 0;

  const EvalRow& row(const std::string& split_name) const;
};

/// Aggregates each query, retrieves against `gallery` and scores acc_at_threshold.
/// Rows: one per (split, membership) in first-appearance order, then "seen", "unseen"
/// (when present) and "overall".
EvalReport evaluate_acc(const std::vector<EvalSample>& dataset, const TemplateGallery& gallery,
                        const AggregatorModel& model, double delta = kDefaultDelta,
                        double lambda_deg = 15.0);

/// Key/value header, config echo and one line per row.
std::string report_text(const EvalReport& report);
/// "split,seen,unseen" table; "-" where a split has no samples of that kind.
std::string report_csv(const EvalReport& report);

/// H×W depth in meters; 0 marks pixels without a surface.
struct DepthImage {
  int height = 0;
  int width = 0;
  std::vector<double> depth;

  DepthImage() = default;
  DepthImage(int h, int w, double fill = 0.0);
  double& at(int y, int x) { return depth[static_cast<std::size_t>(y) * width + x]; }
};

inline constexpr double kDefaultVsdTau = 0.02;
inline constexpr double kVsdRecallThreshold = 0.3;

/// 1 − |agreeing pixels in V̂∩V̄| / |V̂∪V̄|, agreeing meaning |d̂ − d̄| < tau; 0 when both
/// validity masks are empty.
double vsd_error(const DepthImage& d_est, const DepthImage& d_gt, double tau = kDefaultVsdTau);
/// Fraction of errors strictly below `threshold`.
double vsd_recall(const std::vector<double>& errors, double threshold = kVsdRecallThreshold);

/// S×S×3 interleaved RGB in [0, 1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<double> rgb;

  double at(int y, int x, int ch) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
};

struct PcaResult {
  std::vector<double> explained_variance;  // all C eigenvalues, descending
  std::vector<std::vector<double>> axes;   // top-3 unit loadings, sign-normalized
};

/// Principal axes of the S·S cells as C-dimensional samples. Requires C >= 3.
PcaResult feature_pca(const Tensor& feat);
/// Top-3 component scores, each min-max normalized; components without range are 0.5.
RgbImage pca_visualize(const AggregatedFeature& feat);

}  // namespace posefuse
