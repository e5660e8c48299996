#pragma once

// Batch commands behind the `posefuse` executable. Every command is a pure function of
// its flags, config file and referenced files.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace posefuse::app {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,    // usage or config error
  kExitArtifact = 2,  // missing or corrupt artifact
  kExitNumeric = 3,   // non-finite loss
};

struct CliOptions {
  std::string command;

  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool force = false;

  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> gallery;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> resume;

  std::optional<std::string> arch;
  std::optional<int> channels, resolution, mid_channels, hidden;
  std::optional<int> epochs, batch_size, negatives_m;
  std::optional<double> learning_rate, tau, train_delta;
  std::optional<double> delta, lambda_deg;
  std::optional<int> timestep;

  // synth-data
  int classes = 5;
  int templates_per_class = 60;
  int queries_per_class = 40;
  double noise = 0.1;
  std::optional<int> unseen_classes;
  double test_fraction = 0.25;
  double perturb_deg = 5.0;
  bool occlusion = false;
  std::string layer_spec = "16x8x8,32x4x4,32x2x2";
  std::optional<double> appearance_gain, pose_gain, nuisance_share;

  // match / viz
  std::optional<int> query_id;
  std::optional<int> template_id;
  int scale = 8;
};

/// Runs one command; diagnostics go to `err`, results to `out`. Returns an ExitCode.
int run_command(const CliOptions& options, std::ostream& out, std::ostream& err);

}  // namespace posefuse::app
