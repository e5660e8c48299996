#pragma once

// Resolved settings for one CLI invocation. Precedence: flags > config file > defaults.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>

#include "posefuse/aggregation.hpp"
#include "posefuse/error.hpp"
#include "posefuse/training.hpp"

namespace posefuse::app {

/// Invalid flag or config value; maps to exit code 1.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;

  std::filesystem::path dataset;
  std::filesystem::path gallery;
  std::filesystem::path checkpoint;
  std::filesystem::path out;

  Arch arch = Arch::kContextWeighted;
  int channels = 128;
  int resolution = 32;
  int mid_channels = 0;
  int hidden = 0;

  TrainConfig train;  // seed is taken from `seed`

  double delta = kDefaultDelta;
  double lambda_deg = 15.0;

  /// Overrides the dataset's provider timestep when set.
  std::optional<int> timestep;

  /// Throws ConfigError when no seed was given.
  std::uint64_t require_seed(const char* command) const;
  AggregatorConfig model_config(const std::vector<Shape3>& layer_spec) const;
  TrainConfig train_config() const;
};

/// Overlays a config document onto `base`. Unknown keys and ill-typed values raise
/// ConfigError naming the field.
RunConfig apply_config_json(const nlohmann::json& doc, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& file, RunConfig base = {});

/// Full resolved configuration, used as the echo embedded in output artifacts.
nlohmann::json run_config_json(const RunConfig& config);

}  // namespace posefuse::app
