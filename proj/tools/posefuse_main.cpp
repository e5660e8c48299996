#include <CLI11.hpp>
#include <iostream>

#include "posefuse/app/commands.hpp"

namespace {

using posefuse::app::CliOptions;

template <typename T>
void optional_flag(CLI::App* app, const std::string& name, std::optional<T>& target,
                   const std::string& help) {
  app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

void add_common(CLI::App* app, CliOptions& o) {
  optional_flag(app, "--config", o.config, "JSON config file");
  optional_flag(app, "--seed", o.seed, "Seed for every random choice");
  optional_flag(app, "--out", o.out, "Output directory (file for viz)");
  app->add_flag("--force", o.force, "Replace a non-empty output directory");
  optional_flag(app, "--dataset", o.dataset, "Dataset directory holding dataset.json");
  optional_flag(app, "--timestep", o.timestep, "Provider timestep override");
}

void add_model(CLI::App* app, CliOptions& o) {
  optional_flag(app, "--checkpoint", o.checkpoint, "Trained checkpoint directory");
  optional_flag(app, "--arch", o.arch, "Aggregation architecture: va, na or cwa");
  optional_flag(app, "--channels", o.channels, "Descriptor channels C");
  optional_flag(app, "--resolution", o.resolution, "Descriptor grid size S");
  optional_flag(app, "--mid-channels", o.mid_channels, "Bottleneck width (0 = C/2)");
  optional_flag(app, "--hidden", o.hidden, "Context MLP width (0 = n*C/2)");
}

void add_matching(CLI::App* app, CliOptions& o) {
  optional_flag(app, "--gallery", o.gallery, "Gallery directory");
  optional_flag(app, "--delta", o.delta, "Per-cell cosine threshold");
  optional_flag(app, "--lambda", o.lambda_deg, "Accuracy threshold in degrees");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Template-based object pose estimation with multi-layer feature aggregation"};
  app.require_subcommand(1);
  CliOptions o;

  auto* synth = app.add_subcommand("synth-data", "Generate a deterministic synthetic dataset");
  add_common(synth, o);
  synth->add_option("--classes", o.classes, "Number of object classes");
  synth->add_option("--templates-per-class", o.templates_per_class, "Viewsphere size hint");
  synth->add_option("--queries-per-class", o.queries_per_class, "Query samples per class");
  synth->add_option("--noise", o.noise, "Query feature noise level");
  optional_flag(synth, "--unseen", o.unseen_classes, "Classes held out of training (default 1)");
  synth->add_option("--test-fraction", o.test_fraction, "Fraction of seen-class queries held out");
  synth->add_option("--perturb-deg", o.perturb_deg, "Query rotation offset from its template");
  synth->add_flag("--occlusion", o.occlusion, "Zero a seeded rectangle of each query's features");
  synth->add_option("--layer-spec", o.layer_spec, "Comma-separated CxHxW layer shapes");
  optional_flag(synth, "--appearance-gain", o.appearance_gain, "Pose-independent signal weight");
  optional_flag(synth, "--pose-gain", o.pose_gain, "Rotation-dependent signal weight");
  optional_flag(synth, "--nuisance-share", o.nuisance_share, "Structured fraction of noise variance");

  auto* extract = app.add_subcommand("extract", "Materialize provider features as fixtures");
  add_common(extract, o);

  auto* gallery = app.add_subcommand("build-gallery", "Aggregate all templates into a gallery");
  add_common(gallery, o);
  add_model(gallery, o);
  optional_flag(gallery, "--gallery", o.gallery, "Gallery directory (when --out is absent)");

  auto* train = app.add_subcommand("train", "Contrastive training of the aggregation network");
  add_common(train, o);
  add_model(train, o);
  optional_flag(train, "--resume", o.resume, "Checkpoint to continue from");
  optional_flag(train, "--epochs", o.epochs, "Training epochs");
  optional_flag(train, "--lr", o.learning_rate, "Learning rate");
  optional_flag(train, "--tau", o.tau, "InfoNCE temperature");
  optional_flag(train, "--M", o.negatives_m, "Templates per query (1 positive + M-1 negatives)");
  optional_flag(train, "--train-delta", o.train_delta, "Similarity threshold used in training");
  optional_flag(train, "--batch-size", o.batch_size, "Queries per update");

  auto* eval = app.add_subcommand("eval", "Acc15 report over seen and unseen classes");
  add_common(eval, o);
  add_model(eval, o);
  add_matching(eval, o);

  auto* match = app.add_subcommand("match", "Retrieve the best template for one query");
  add_common(match, o);
  add_model(match, o);
  add_matching(match, o);
  optional_flag(match, "--query", o.query_id, "Sample id");

  auto* viz = app.add_subcommand("viz", "PCA false-color image of aggregated features");
  add_common(viz, o);
  add_model(viz, o);
  optional_flag(viz, "--query", o.query_id, "Sample id");
  optional_flag(viz, "--template", o.template_id, "Template id");
  viz->add_option("--scale", o.scale, "Pixels per descriptor cell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return posefuse::app::kExitConfig;
  }
  for (auto* sub : app.get_subcommands()) o.command = sub->get_name();
  return posefuse::app::run_command(o, std::cout, std::cerr);
}
