#include "posefuse/app/commands.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "posefuse/app/dataset.hpp"
#include "posefuse/app/png_writer.hpp"
#include "posefuse/app/run_config.hpp"
#include "posefuse/blob_io.hpp"
#include "posefuse/error.hpp"
#include "posefuse/evaluation.hpp"
#include "posefuse/matching.hpp"
#include "posefuse/synthetic.hpp"
#include "posefuse/training.hpp"

namespace posefuse::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kTagWorld = 0x574f524c44;
constexpr std::uint64_t kTagQueryPose = 0x51504f5345;
constexpr std::uint64_t kTagQueryNoise = 0x514e4f4953;
constexpr std::uint64_t kTagOcclusion = 0x4f43434c;

RunConfig resolve_config(const CliOptions& o) {
  RunConfig c;
  if (o.config) c = load_run_config(*o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.dataset) c.dataset = *o.dataset;
  if (o.gallery) c.gallery = *o.gallery;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.out) c.out = *o.out;
  if (o.arch) {
    try {
      c.arch = parse_arch(*o.arch);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("--arch: ") + e.what());
    }
  }
  if (o.channels) c.channels = *o.channels;
  if (o.resolution) c.resolution = *o.resolution;
  if (o.mid_channels) c.mid_channels = *o.mid_channels;
  if (o.hidden) c.hidden = *o.hidden;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.negatives_m) c.train.M = *o.negatives_m;
  if (o.learning_rate) c.train.learning_rate = *o.learning_rate;
  if (o.tau) c.train.tau = *o.tau;
  if (o.train_delta) c.train.delta = *o.train_delta;
  if (o.delta) c.delta = *o.delta;
  if (o.lambda_deg) c.lambda_deg = *o.lambda_deg;
  if (o.timestep) c.timestep = *o.timestep;
  if (!(c.delta >= -1.0 && c.delta <= 1.0)) throw ConfigError("eval.delta must lie in [-1, 1]");
  if (!(c.lambda_deg > 0.0 && c.lambda_deg <= 180.0)) throw ConfigError("eval.lambda_deg must lie in (0, 180]");
  return c;
}

const fs::path& require_path(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("missing ") + what);
  return p;
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path '" + dir.string() + "' is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError("output directory '" + dir.string() + "' is not empty (use --force)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

DatasetLayout open_dataset(const RunConfig& c) {
  DatasetLayout layout = load_dataset(require_path(c.dataset, "--dataset"));
  if (c.timestep) layout.provider.timestep = *c.timestep;
  return layout;
}

// Trained model from the checkpoint path, or a freshly seeded one.
AggregatorModel resolve_model(const RunConfig& c, const DatasetLayout& layout) {
  if (!c.checkpoint.empty()) {
    if (fs::is_regular_file(c.checkpoint / "train_state.json")) {
      return checkpoint_load(c.checkpoint, layout.provider.layer_spec).model;
    }
    AggregatorModel m = load_model(c.checkpoint);
    if (m.config().layer_spec != layout.provider.layer_spec) {
      throw FingerprintMismatch("model '" + c.checkpoint.string() + "' expects a different layer_spec");
    }
    return m;
  }
  c.require_seed("an untrained model");
  return AggregatorModel(c.model_config(layout.provider.layer_spec));
}

json echo(const char* command, const RunConfig& c) {
  return {{"command", command}, {"config", run_config_json(c)}};
}

std::vector<Shape3> parse_layer_spec(const std::string& text) {
  std::vector<Shape3> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    Shape3 s;
    char x1 = 0, x2 = 0;
    std::istringstream is(item);
    if (!(is >> s.channels >> x1 >> s.height >> x2 >> s.width) || x1 != 'x' || x2 != 'x' ||
        s.channels < 1 || s.height < 1 || s.width < 1 || !is.eof()) {
      throw ConfigError("--layer-spec entry '" + item + "' is not CxHxW");
    }
    out.push_back(s);
  }
  if (out.empty()) throw ConfigError("--layer-spec is empty");
  return out;
}

std::string class_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "obj_%03d", id);
  return buf;
}

int cmd_synth_data(const CliOptions& o, const RunConfig& c, std::ostream& out) {
  const std::uint64_t seed = c.require_seed("synth-data");
  const fs::path& dir = require_path(c.out, "--out");
  if (o.classes < 1 || o.templates_per_class < 1 || o.queries_per_class < 1) {
    throw ConfigError("--classes, --templates-per-class and --queries-per-class must be >= 1");
  }
  if (!(o.noise >= 0.0)) throw ConfigError("--noise must be >= 0");
  if (!(o.test_fraction >= 0.0 && o.test_fraction <= 1.0)) throw ConfigError("--test-fraction must lie in [0, 1]");
  if (!(o.perturb_deg >= 0.0)) throw ConfigError("--perturb-deg must be >= 0");
  const int unseen = o.unseen_classes.value_or(o.classes > 1 ? 1 : 0);
  if (unseen < 0 || unseen >= o.classes) throw ConfigError("--unseen must lie in [0, classes)");

  DatasetLayout layout;
  layout.provider.kind = "synthetic";
  layout.provider.layer_spec = parse_layer_spec(o.layer_spec);
  layout.provider.world.basis_seed = mix_seed(seed, kTagWorld);
  if (o.appearance_gain) layout.provider.world.appearance_gain = *o.appearance_gain;
  if (o.pose_gain) layout.provider.world.pose_gain = *o.pose_gain;
  if (o.nuisance_share) {
    if (!(*o.nuisance_share >= 0.0 && *o.nuisance_share <= 1.0)) throw ConfigError("--nuisance-share must lie in [0, 1]");
    layout.provider.world.nuisance_share = *o.nuisance_share;
  }
  layout.provider.timestep = c.timestep.value_or(0);

  DatasetSplit split{"split0", {}, {}};
  for (int k = 0; k < o.classes; ++k) {
    layout.classes.push_back({k, class_name(k)});
    (k < o.classes - unseen ? split.seen : split.unseen).push_back(k);
  }
  layout.splits.push_back(split);

  const ViewsphereSample views =
      sample_viewsphere(static_cast<std::size_t>(o.templates_per_class), true, 1);
  const int nv = static_cast<int>(views.rotations.size());
  for (int k = 0; k < o.classes; ++k) {
    for (int v = 0; v < nv; ++v) {
      DatasetTemplate t;
      t.id = k * nv + v;
      t.class_id = k;
      t.pose.rotation = views.rotations[v];
      layout.templates.push_back(std::move(t));
    }
  }

  const int n_train = static_cast<int>(std::lround((1.0 - o.test_fraction) * o.queries_per_class));
  const double angle = o.perturb_deg * std::numbers::pi / 180.0;
  for (int k = 0; k < o.classes; ++k) {
    const bool seen = k < o.classes - unseen;
    for (int q = 0; q < o.queries_per_class; ++q) {
      std::mt19937_64 rng(mix_seed(seed, kTagQueryPose, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(q)));
      std::uniform_int_distribution<int> pick(0, nv - 1);
      const Rotation3& base = views.rotations[pick(rng)];
      const Eigen::Vector3d axis = random_rotation(rng()).matrix().col(0);
      DatasetSample s;
      s.id = k * o.queries_per_class + q;
      s.class_id = k;
      s.pose.rotation = compose(from_axis_angle(axis, angle), base);
      s.set = seen && q < n_train ? "train" : "test";
      s.features.noise = o.noise;
      s.features.seed = mix_seed(seed, kTagQueryNoise, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(q));
      if (o.occlusion) {
        std::mt19937_64 orng(mix_seed(seed, kTagOcclusion, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(q)));
        std::uniform_real_distribution<double> extent(0.3, 0.5), unit(0.0, 1.0);
        const double h = extent(orng), w = extent(orng);
        const double y0 = unit(orng) * (1.0 - h), x0 = unit(orng) * (1.0 - w);
        s.features.occlusion = NormalizedRect{y0, x0, y0 + h, x0 + w};
      }
      layout.samples.push_back(std::move(s));
    }
  }

  prepare_out_dir(dir, o.force);
  save_dataset(layout, dir);
  json e = echo("synth-data", c);
  e["synth"] = {{"classes", o.classes},
                {"templates_per_class", o.templates_per_class},
                {"templates_realized", nv},
                {"queries_per_class", o.queries_per_class},
                {"noise", o.noise},
                {"unseen", unseen},
                {"test_fraction", o.test_fraction},
                {"perturb_deg", o.perturb_deg},
                {"occlusion", o.occlusion},
                {"layer_spec", o.layer_spec}};
  write_json(dir / "config.json", e);
  out << "wrote " << layout.templates.size() << " templates (" << nv << " per class) and "
      << layout.samples.size() << " samples to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_extract(const CliOptions& o, const RunConfig& c, std::ostream& out) {
  const DatasetLayout src = open_dataset(c);
  const fs::path& dir = require_path(c.out, "--out");
  const auto provider = make_provider(src.provider);
  prepare_out_dir(dir, o.force);

  DatasetLayout dst = src;
  dst.root = dir;
  dst.provider.kind = "fixture";
  dst.provider.layer_names.clear();
  for (const auto& l : provider->layers()) dst.provider.layer_names.push_back(l.name);
  for (auto& t : dst.templates) {
    const fs::path rel = fs::path("fixtures") / ("template_" + std::to_string(t.id));
    fixture_save(load_features(src, *provider, t.class_id, t.pose, t.features), dir / rel);
    t.features = FeatureRef{};
    t.features.fixture = rel;
  }
  for (auto& s : dst.samples) {
    const fs::path rel = fs::path("fixtures") / ("sample_" + std::to_string(s.id));
    fixture_save(load_features(src, *provider, s.class_id, s.pose, s.features), dir / rel);
    s.features = FeatureRef{};
    s.features.fixture = rel;
  }
  save_dataset(dst, dir);
  write_json(dir / "config.json", echo("extract", c));
  out << "extracted " << dst.templates.size() + dst.samples.size() << " feature stacks to "
      << dir.string() << "\n";
  return kExitOk;
}

int cmd_build_gallery(const CliOptions& o, const RunConfig& c, std::ostream& out) {
  const DatasetLayout layout = open_dataset(c);
  const fs::path& dir = !c.out.empty() ? c.out : require_path(c.gallery, "--out");
  const AggregatorModel model = resolve_model(c, layout);
  const auto provider = make_provider(layout.provider);
  const auto sources = template_sources(layout, *provider, model.config().resolution);
  if (sources.empty()) throw FormatError("dataset '" + c.dataset.string() + "' has no templates");
  const TemplateGallery gallery = build_gallery(sources, model);
  prepare_out_dir(dir, o.force);
  json e = echo("build-gallery", c);
  e["model"] = config_json(model.config());
  gallery_save(gallery, dir, e);
  out << "gallery of " << gallery.templates.size() << " templates, model "
      << fingerprint_hex(gallery.model_fingerprint) << "\n";
  return kExitOk;
}

int cmd_train(const CliOptions& o, const RunConfig& c, std::ostream& out, std::ostream& err) {
  c.require_seed("train");
  const TrainConfig tc = c.train_config();
  const DatasetLayout layout = open_dataset(c);
  const fs::path& dir = !c.out.empty() ? c.out : require_path(c.checkpoint, "--out");
  const AggregatorConfig mc = c.model_config(layout.provider.layer_spec);
  const auto provider = make_provider(layout.provider);
  const auto templates = template_sources(layout, *provider, mc.resolution, true);
  const auto samples = train_samples(layout, *provider);
  if (samples.empty()) throw ConfigError("dataset has no training samples of seen classes");
  std::optional<Checkpoint> resume;
  if (o.resume) resume = checkpoint_load(*o.resume, layout.provider.layer_spec);

  prepare_out_dir(dir, o.force);
  json e = echo("train", c);
  try {
    const Checkpoint ck = train(samples, templates, mc, tc, resume ? &*resume : nullptr);
    checkpoint_save(ck, dir);
    e["model_fingerprint"] = fingerprint_hex(ck.model.fingerprint());
    write_json(dir / "config.json", e);
    for (int epoch = 0; epoch < ck.epoch; ++epoch) {
      double sum = 0.0;
      int n = 0;
      for (const auto& r : ck.history) {
        if (r.epoch == epoch) {
          sum += r.loss;
          ++n;
        }
      }
      char buf[96];
      std::snprintf(buf, sizeof(buf), "epoch %d mean_loss %.6f\n", epoch, n > 0 ? sum / n : 0.0);
      out << buf;
    }
    out << "checkpoint " << dir.string() << " model " << fingerprint_hex(ck.model.fingerprint()) << "\n";
  } catch (const TrainingDiverged& d) {
    checkpoint_save(d.last_good(), dir);
    e["model_fingerprint"] = fingerprint_hex(d.last_good().model.fingerprint());
    e["diverged"] = d.what();
    write_json(dir / "config.json", e);
    err << "error: " << d.what() << "; last good checkpoint (epoch " << d.last_good().epoch
        << ") saved to " << dir.string() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_eval(const CliOptions& o, const RunConfig& c, std::ostream& out) {
  const DatasetLayout layout = open_dataset(c);
  const fs::path& dir = require_path(c.out, "--out");
  const AggregatorModel model = resolve_model(c, layout);
  const TemplateGallery gallery = gallery_load(require_path(c.gallery, "--gallery"));
  const auto provider = make_provider(layout.provider);
  const auto samples = eval_samples(layout, *provider);
  if (samples.empty()) throw ConfigError("dataset has no test samples");
  EvalReport report = evaluate_acc(samples, gallery, model, c.delta, c.lambda_deg);
  report.config = echo("eval", c);
  report.config["model"] = config_json(model.config());
  prepare_out_dir(dir, o.force);
  const std::string text = report_text(report);
  write_text(dir / "report.txt", text);
  write_text(dir / "report.csv", report_csv(report));
  out << text;
  return kExitOk;
}

const DatasetSample& sample_by_id(const DatasetLayout& layout, int id) {
  for (const auto& s : layout.samples) {
    if (s.id == id) return s;
  }
  throw ConfigError("--query " + std::to_string(id) + " is not a sample id in the dataset");
}

const DatasetTemplate& template_by_id(const DatasetLayout& layout, int id) {
  for (const auto& t : layout.templates) {
    if (t.id == id) return t;
  }
  throw ConfigError("--template " + std::to_string(id) + " is not a template id in the dataset");
}

int cmd_match(const CliOptions& o, const RunConfig& c, std::ostream& out) {
  if (!o.query_id) throw ConfigError("match needs --query");
  const DatasetLayout layout = open_dataset(c);
  const DatasetSample& s = sample_by_id(layout, *o.query_id);
  const AggregatorModel model = resolve_model(c, layout);
  const TemplateGallery gallery = gallery_load(require_path(c.gallery, "--gallery"));
  const auto provider = make_provider(layout.provider);
  const FeatureStack stack = load_features(layout, *provider, s.class_id, s.pose, s.features);
  const MatchResult m = retrieve(model.aggregate(stack), gallery, c.delta, model.fingerprint());

  Pose pose = m.pose;
  pose.translation.reset();
  const DatasetTemplate* t = nullptr;
  for (const auto& cand : layout.templates) {
    if (cand.id == m.template_id) t = &cand;
  }
  if (t != nullptr && s.bbox && s.intrinsics && t->bbox && m.pose.translation) {
    pose.translation = estimate_translation(*s.bbox, *t->bbox, m.pose.translation->z(), *s.intrinsics);
  }
  json result = {{"query", s.id},
                 {"template_id", m.template_id},
                 {"score", m.score},
                 {"class_id", m.cls.id},
                 {"class_name", m.cls.name},
                 {"pose", pose_json(pose)},
                 {"model_fingerprint", fingerprint_hex(model.fingerprint())}};
  out << result.dump(2) << "\n";
  if (!c.out.empty()) {
    prepare_out_dir(c.out, o.force);
    json e = echo("match", c);
    e["model"] = config_json(model.config());
    e["result"] = result;
    write_json(c.out / "match.json", e);
  }
  return kExitOk;
}

int cmd_viz(const CliOptions& o, const RunConfig& c, std::ostream& out) {
  if (o.query_id.has_value() == o.template_id.has_value()) {
    throw ConfigError("viz needs exactly one of --query or --template");
  }
  const fs::path& file = require_path(c.out, "--out");
  if (fs::exists(file) && !o.force) throw ConfigError("'" + file.string() + "' exists (use --force)");
  const DatasetLayout layout = open_dataset(c);
  const AggregatorModel model = resolve_model(c, layout);
  const auto provider = make_provider(layout.provider);
  FeatureStack stack;
  if (o.query_id) {
    const DatasetSample& s = sample_by_id(layout, *o.query_id);
    stack = load_features(layout, *provider, s.class_id, s.pose, s.features);
  } else {
    const DatasetTemplate& t = template_by_id(layout, *o.template_id);
    stack = load_features(layout, *provider, t.class_id, t.pose, t.features);
  }
  const RgbImage image = pca_visualize(model.aggregate(stack));
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  write_png(file, image, o.scale);
  out << "wrote " << file.string() << " (" << image.width * o.scale << "x" << image.height * o.scale << ")\n";
  return kExitOk;
}

}  // namespace

int run_command(const CliOptions& o, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig c = resolve_config(o);
    if (o.command == "synth-data") return cmd_synth_data(o, c, out);
    if (o.command == "extract") return cmd_extract(o, c, out);
    if (o.command == "build-gallery") return cmd_build_gallery(o, c, out);
    if (o.command == "train") return cmd_train(o, c, out, err);
    if (o.command == "eval") return cmd_eval(o, c, out);
    if (o.command == "match") return cmd_match(o, c, out);
    if (o.command == "viz") return cmd_viz(o, c, out);
    err << "error: unknown command '" << o.command << "'\n";
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalFailure& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace posefuse::app
