#pragma once

// Masked cosine similarity between descriptor grids and nearest-template retrieval.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "posefuse/aggregation.hpp"
#include "posefuse/features.hpp"
#include "posefuse/geometry.hpp"

namespace posefuse {

inline constexpr double kDefaultDelta = 0.2;
/// Score of a template whose masked cells all fall below the threshold.
inline constexpr double kNoSurvivorScore = -1.0;
/// Norms below this make a cell's cosine 0.
inline constexpr double kMinCellNorm = 1e-12;

/// S×S boolean grid, row-major.
struct Mask {
  int size = 0;
  std::vector<std::uint8_t> cells;

  static Mask full(int size);
  static Mask empty(int size);
  bool at(int y, int x) const noexcept { return cells[static_cast<std::size_t>(y) * size + x] != 0; }
  void set(int y, int x, bool value) { cells[static_cast<std::size_t>(y) * size + x] = value ? 1 : 0; }
  std::size_t count() const noexcept;
  bool operator==(const Mask&) const = default;
};

/// Max-pools an H×W pixel mask (row-major, nonzero = covered) onto S×S cells: a cell is
/// true when any pixel it covers is.
Mask pool_mask(const std::vector<std::uint8_t>& pixels, int height, int width, int size);

/// Alternating run lengths starting with a false run (possibly 0).
std::vector<int> mask_to_rle(const Mask& mask);
Mask mask_from_rle(const std::vector<int>& runs, int size);

struct Template {
  int id = 0;
  ClassLabel cls;
  Pose pose;
  Mask mask;
  AggregatedFeature features;
  std::string source;
};

/// Template metadata plus the raw provider stack its features are computed from.
struct TemplateSource {
  int id = 0;
  ClassLabel cls;
  Pose pose;
  Mask mask;
  FeatureStack stack;
  std::string source;
};

struct TemplateGallery {
  std::vector<Template> templates;
  std::uint64_t model_fingerprint = 0;

  /// Throws InvalidArgument or ShapeMismatch unless ids are unique, masks non-empty
  /// and all feature grids share one (C, S).
  void validate() const;
  const Template& by_id(int id) const;
};

struct MatchResult {
  int template_id = 0;
  double score = kNoSurvivorScore;
  ClassLabel cls;
  Pose pose;
};

/// Mean over mask cells whose per-cell cosine is >= delta; kNoSurvivorScore when none.
double masked_similarity(const Tensor& query, const Tensor& tmpl, const Mask& mask,
                         double delta = kDefaultDelta);
double masked_similarity(const AggregatedFeature& query, const AggregatedFeature& tmpl,
                         const Mask& mask, double delta = kDefaultDelta);

/// Same score; also adds d(score)/d(query) and d(score)/d(tmpl) into the non-null
/// outputs (pre-shaped like the inputs). The survivor set is held fixed, so the
/// gradient is that of the mean over survivors; it is zero for the sentinel.
double masked_similarity_grad(const Tensor& query, const Tensor& tmpl, const Mask& mask,
                              double delta, Tensor* d_query, Tensor* d_tmpl);

/// Argmax over templates in ascending id order; ties keep the lowest id.
/// Throws FingerprintMismatch when the gallery was built by another model.
MatchResult retrieve(const AggregatedFeature& query, const TemplateGallery& gallery,
                     double delta, std::uint64_t model_fingerprint);

/// Aggregates every source once through `model`.
TemplateGallery build_gallery(const std::vector<TemplateSource>& sources,
                              const AggregatorModel& model);

/// gallery.json plus features/<id>.bin (f64le). `config` is echoed into gallery.json.
void gallery_save(const TemplateGallery& gallery, const std::filesystem::path& dir,
                  const nlohmann::json& config = nlohmann::json::object());
TemplateGallery gallery_load(const std::filesystem::path& dir);
/// The config echo stored alongside a gallery.
nlohmann::json gallery_config(const std::filesystem::path& dir);

nlohmann::json pose_json(const Pose& pose);
Pose parse_pose_json(const nlohmann::json& doc, const std::string& context);

}  // namespace posefuse
