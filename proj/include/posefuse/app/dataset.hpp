#pragma once

// On-disk dataset layout: dataset.json listing classes, splits, templates and samples.
// Each entry's features come either from a synthetic descriptor or a fixture directory
// relative to the dataset root.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "posefuse/evaluation.hpp"
#include "posefuse/features.hpp"
#include "posefuse/geometry.hpp"
#include "posefuse/matching.hpp"
#include "posefuse/synthetic.hpp"
#include "posefuse/training.hpp"

namespace posefuse::app {

struct ProviderSpec {
  std::string kind = "synthetic";  // synthetic | fixture | backbone
  std::vector<Shape3> layer_spec;
  /// Empty selects the synthetic provider's names.
  std::vector<std::string> layer_names;
  SyntheticWorldParams world;
  int timestep = 0;

  std::vector<LayerInfo> layers() const;
};

struct FeatureRef {
  // Synthetic descriptor (used when fixture is empty).
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::optional<NormalizedRect> occlusion;
  // Fixture directory relative to the dataset root.
  std::filesystem::path fixture;
};

struct PixelMask {
  int height = 1;
  int width = 1;
  std::vector<std::uint8_t> pixels{1};
};

struct DatasetClass {
  int id = 0;
  std::string name;
};

struct DatasetSplit {
  std::string name;
  std::vector<int> seen;
  std::vector<int> unseen;
};

struct DatasetTemplate {
  int id = 0;
  int class_id = 0;
  Pose pose;
  PixelMask mask;
  FeatureRef features;
  std::optional<PixelRect> bbox;
};

struct DatasetSample {
  int id = 0;
  int class_id = 0;
  Pose pose;
  std::string set = "test";  // train | test
  FeatureRef features;
  std::optional<PixelRect> bbox;
  std::optional<Eigen::Matrix3d> intrinsics;
};

struct DatasetLayout {
  std::filesystem::path root;
  ProviderSpec provider;
  std::vector<DatasetClass> classes;
  std::vector<DatasetSplit> splits;
  std::vector<DatasetTemplate> templates;
  std::vector<DatasetSample> samples;

  const DatasetClass& class_by_id(int id) const;
  ClassLabel label(int class_id) const;
  /// Split whose seen or unseen list holds `class_id`; nullptr if none.
  const DatasetSplit* split_of(int class_id) const;
  bool is_seen(int class_id) const;
};

/// Throws FormatError naming the offending entry unless ids are unique, every class
/// reference resolves and splits partition the classes.
void validate_layout(const DatasetLayout& layout);

DatasetLayout load_dataset(const std::filesystem::path& root);
void save_dataset(const DatasetLayout& layout, const std::filesystem::path& root);

/// Provider implied by the layout's provider spec.
std::unique_ptr<FeatureProvider> make_provider(const ProviderSpec& spec);
/// Features for one entry.
FeatureStack load_features(const DatasetLayout& layout, const FeatureProvider& provider,
                           int class_id, const Pose& pose, const FeatureRef& ref);

/// Templates with masks pooled onto `resolution` cells. With `seen_only` set, keeps
/// templates of seen classes only.
std::vector<TemplateSource> template_sources(const DatasetLayout& layout,
                                             const FeatureProvider& provider, int resolution,
                                             bool seen_only = false);
/// Samples in the "train" set whose class is seen.
std::vector<TrainSample> train_samples(const DatasetLayout& layout, const FeatureProvider& provider);
/// Samples in the "test" set, tagged with their split and seen membership.
std::vector<EvalSample> eval_samples(const DatasetLayout& layout, const FeatureProvider& provider);

}  // namespace posefuse::app
