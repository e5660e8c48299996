#include "posefuse/app/dataset.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "posefuse/blob_io.hpp"
#include "posefuse/error.hpp"

namespace posefuse::app {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<LayerInfo> ProviderSpec::layers() const {
  std::vector<LayerInfo> out = synthetic_layer_info(layer_spec);
  if (!layer_names.empty()) {
    if (layer_names.size() != layer_spec.size()) {
      throw FormatError("provider layer_names and layer_spec differ in length");
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].name = layer_names[i];
  }
  return out;
}

const DatasetClass& DatasetLayout::class_by_id(int id) const {
  for (const auto& c : classes) {
    if (c.id == id) return c;
  }
  throw FormatError("dataset has no class with id " + std::to_string(id));
}

ClassLabel DatasetLayout::label(int class_id) const { return {class_id, class_by_id(class_id).name}; }

const DatasetSplit* DatasetLayout::split_of(int class_id) const {
  for (const auto& s : splits) {
    if (std::find(s.seen.begin(), s.seen.end(), class_id) != s.seen.end() ||
        std::find(s.unseen.begin(), s.unseen.end(), class_id) != s.unseen.end()) {
      return &s;
    }
  }
  return nullptr;
}

bool DatasetLayout::is_seen(int class_id) const {
  if (splits.empty()) return true;
  const DatasetSplit* s = split_of(class_id);
  return s != nullptr && std::find(s->seen.begin(), s->seen.end(), class_id) != s->seen.end();
}

void validate_layout(const DatasetLayout& layout) {
  if (layout.provider.layer_spec.empty()) throw FormatError("dataset.json: provider.layer_spec is empty");
  if (layout.classes.empty()) throw FormatError("dataset.json: no classes");
  std::set<int> class_ids;
  for (const auto& c : layout.classes) {
    if (!class_ids.insert(c.id).second) {
      throw FormatError("dataset.json: duplicate class id " + std::to_string(c.id));
    }
  }
  std::set<int> covered;
  for (const auto& s : layout.splits) {
    for (const auto* list : {&s.seen, &s.unseen}) {
      for (int id : *list) {
        if (!class_ids.count(id)) {
          throw FormatError("dataset.json: split '" + s.name + "' names unknown class " + std::to_string(id));
        }
        if (!covered.insert(id).second) {
          throw FormatError("dataset.json: class " + std::to_string(id) + " appears in more than one split group");
        }
      }
    }
  }
  if (!layout.splits.empty() && covered != class_ids) {
    throw FormatError("dataset.json: splits do not cover every class");
  }
  std::set<int> template_ids;
  for (const auto& t : layout.templates) {
    if (!template_ids.insert(t.id).second) {
      throw FormatError("dataset.json: duplicate template id " + std::to_string(t.id));
    }
    if (!class_ids.count(t.class_id)) {
      throw FormatError("dataset.json: template " + std::to_string(t.id) + " has unknown class " +
                        std::to_string(t.class_id));
    }
    if (t.mask.pixels.size() != static_cast<std::size_t>(t.mask.height) * t.mask.width ||
        std::none_of(t.mask.pixels.begin(), t.mask.pixels.end(), [](std::uint8_t p) { return p != 0; })) {
      throw FormatError("dataset.json: template " + std::to_string(t.id) + " has an empty or malformed mask");
    }
  }
  std::set<int> sample_ids;
  for (const auto& s : layout.samples) {
    if (!sample_ids.insert(s.id).second) {
      throw FormatError("dataset.json: duplicate sample id " + std::to_string(s.id));
    }
    if (!class_ids.count(s.class_id)) {
      throw FormatError("dataset.json: sample " + std::to_string(s.id) + " has unknown class " +
                        std::to_string(s.class_id));
    }
    if (s.set != "train" && s.set != "test") {
      throw FormatError("dataset.json: sample " + std::to_string(s.id) + " set must be train or test");
    }
  }
}

namespace {

std::vector<int> bytes_to_rle(const std::vector<std::uint8_t>& cells) {
  Mask m{1, cells};
  return mask_to_rle(m);
}

std::vector<std::uint8_t> rle_to_bytes(const std::vector<int>& runs, std::size_t count,
                                       const std::string& ctx) {
  std::vector<std::uint8_t> out;
  out.reserve(count);
  bool value = false;
  for (int run : runs) {
    if (run < 0 || out.size() + static_cast<std::size_t>(run) > count) {
      throw FormatError(ctx + ": mask run lengths exceed the mask size");
    }
    out.insert(out.end(), static_cast<std::size_t>(run), value ? 1 : 0);
    value = !value;
  }
  if (out.size() != count) throw FormatError(ctx + ": mask run lengths do not cover the mask");
  return out;
}

json rect_json(const PixelRect& r) { return {r.x, r.y, r.width, r.height}; }

PixelRect parse_rect(const json& v, const std::string& ctx) {
  const auto a = v.get<std::vector<double>>();
  if (a.size() != 4) throw FormatError(ctx + ": bbox needs [x, y, width, height]");
  return {a[0], a[1], a[2], a[3]};
}

json feature_json(const FeatureRef& f) {
  if (!f.fixture.empty()) return {{"fixture", f.fixture.generic_string()}};
  json doc = {{"noise", f.noise}, {"seed", f.seed}};
  if (f.occlusion) {
    const auto& o = *f.occlusion;
    doc["occlusion"] = {o.y0, o.x0, o.y1, o.x1};
  }
  return doc;
}

FeatureRef parse_feature(const json& doc, const std::string& ctx) {
  FeatureRef f;
  if (doc.contains("fixture")) {
    f.fixture = doc["fixture"].get<std::string>();
    return f;
  }
  f.noise = require_key(doc, "noise", ctx).get<double>();
  f.seed = require_key(doc, "seed", ctx).get<std::uint64_t>();
  if (doc.contains("occlusion")) {
    const auto o = doc["occlusion"].get<std::vector<double>>();
    if (o.size() != 4) throw FormatError(ctx + ": occlusion needs [y0, x0, y1, x1]");
    f.occlusion = NormalizedRect{o[0], o[1], o[2], o[3]};
  }
  return f;
}

json world_json(const SyntheticWorldParams& w) {
  return {{"basis_seed", w.basis_seed},
          {"appearance_gain", w.appearance_gain},
          {"pose_gain", w.pose_gain},
          {"nuisance_share", w.nuisance_share}};
}

SyntheticWorldParams parse_world(const json& doc, const std::string& ctx) {
  SyntheticWorldParams w;
  w.basis_seed = require_key(doc, "basis_seed", ctx).get<std::uint64_t>();
  w.appearance_gain = require_key(doc, "appearance_gain", ctx).get<double>();
  w.pose_gain = require_key(doc, "pose_gain", ctx).get<double>();
  w.nuisance_share = require_key(doc, "nuisance_share", ctx).get<double>();
  return w;
}

}  // namespace

void save_dataset(const DatasetLayout& layout, const fs::path& root) {
  validate_layout(layout);
  json spec = json::array();
  for (const auto& s : layout.provider.layer_spec) spec.push_back(shape_json(s));
  json provider = {{"kind", layout.provider.kind},
                   {"layer_spec", spec},
                   {"timestep", layout.provider.timestep},
                   {"world", world_json(layout.provider.world)}};
  if (!layout.provider.layer_names.empty()) provider["layer_names"] = layout.provider.layer_names;

  json classes = json::array();
  for (const auto& c : layout.classes) classes.push_back({{"id", c.id}, {"name", c.name}});
  json splits = json::array();
  for (const auto& s : layout.splits) splits.push_back({{"name", s.name}, {"seen", s.seen}, {"unseen", s.unseen}});
  json templates = json::array();
  for (const auto& t : layout.templates) {
    json e = {{"id", t.id},
              {"class_id", t.class_id},
              {"pose", pose_json(t.pose)},
              {"mask", {{"height", t.mask.height}, {"width", t.mask.width}, {"rle", bytes_to_rle(t.mask.pixels)}}},
              {"features", feature_json(t.features)}};
    if (t.bbox) e["bbox"] = rect_json(*t.bbox);
    templates.push_back(std::move(e));
  }
  json samples = json::array();
  for (const auto& s : layout.samples) {
    json e = {{"id", s.id},
              {"class_id", s.class_id},
              {"pose", pose_json(s.pose)},
              {"set", s.set},
              {"features", feature_json(s.features)}};
    if (s.bbox) e["bbox"] = rect_json(*s.bbox);
    if (s.intrinsics) {
      std::vector<double> k;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) k.push_back((*s.intrinsics)(r, c));
      }
      e["intrinsics"] = k;
    }
    samples.push_back(std::move(e));
  }
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + root.string() + "': " + ec.message());
  write_json(root / "dataset.json", {{"version", 1},
                                     {"provider", provider},
                                     {"classes", classes},
                                     {"splits", splits},
                                     {"templates", templates},
                                     {"samples", samples}});
}

DatasetLayout load_dataset(const fs::path& root) {
  const fs::path file = root / "dataset.json";
  if (!fs::is_regular_file(file)) throw FormatError("'" + file.string() + "' not found");
  const json doc = read_json(file);
  const std::string ctx = file.string();
  DatasetLayout layout;
  layout.root = root;
  try {
    if (require_key(doc, "version", ctx).get<int>() != 1) {
      throw VersionMismatch(ctx + ": unsupported version " + doc["version"].dump());
    }
    const json& p = require_key(doc, "provider", ctx);
    layout.provider.kind = require_key(p, "kind", ctx).get<std::string>();
    if (layout.provider.kind != "synthetic" && layout.provider.kind != "fixture" &&
        layout.provider.kind != "backbone") {
      throw FormatError(ctx + ": provider.kind must be synthetic, fixture or backbone");
    }
    for (const auto& s : require_key(p, "layer_spec", ctx)) layout.provider.layer_spec.push_back(parse_shape(s, ctx));
    if (p.contains("layer_names")) layout.provider.layer_names = p["layer_names"].get<std::vector<std::string>>();
    layout.provider.timestep = p.value("timestep", 0);
    if (p.contains("world")) layout.provider.world = parse_world(p["world"], ctx);

    for (const auto& c : require_key(doc, "classes", ctx)) {
      layout.classes.push_back({require_key(c, "id", ctx).get<int>(), require_key(c, "name", ctx).get<std::string>()});
    }
    for (const auto& s : require_key(doc, "splits", ctx)) {
      layout.splits.push_back({require_key(s, "name", ctx).get<std::string>(),
                               require_key(s, "seen", ctx).get<std::vector<int>>(),
                               require_key(s, "unseen", ctx).get<std::vector<int>>()});
    }
    for (const auto& e : require_key(doc, "templates", ctx)) {
      DatasetTemplate t;
      t.id = require_key(e, "id", ctx).get<int>();
      const std::string tctx = ctx + " template " + std::to_string(t.id);
      t.class_id = require_key(e, "class_id", tctx).get<int>();
      t.pose = parse_pose_json(require_key(e, "pose", tctx), tctx);
      if (e.contains("mask")) {
        const json& m = e["mask"];
        t.mask.height = require_key(m, "height", tctx).get<int>();
        t.mask.width = require_key(m, "width", tctx).get<int>();
        if (t.mask.height < 1 || t.mask.width < 1) throw FormatError(tctx + ": mask dimensions must be positive");
        t.mask.pixels = rle_to_bytes(require_key(m, "rle", tctx).get<std::vector<int>>(),
                                     static_cast<std::size_t>(t.mask.height) * t.mask.width, tctx);
      }
      t.features = parse_feature(require_key(e, "features", tctx), tctx);
      if (e.contains("bbox")) t.bbox = parse_rect(e["bbox"], tctx);
      layout.templates.push_back(std::move(t));
    }
    for (const auto& e : require_key(doc, "samples", ctx)) {
      DatasetSample s;
      s.id = require_key(e, "id", ctx).get<int>();
      const std::string sctx = ctx + " sample " + std::to_string(s.id);
      s.class_id = require_key(e, "class_id", sctx).get<int>();
      s.pose = parse_pose_json(require_key(e, "pose", sctx), sctx);
      s.set = e.value("set", std::string("test"));
      s.features = parse_feature(require_key(e, "features", sctx), sctx);
      if (e.contains("bbox")) s.bbox = parse_rect(e["bbox"], sctx);
      if (e.contains("intrinsics")) {
        const auto k = e["intrinsics"].get<std::vector<double>>();
        if (k.size() != 9) throw FormatError(sctx + ": intrinsics needs 9 values");
        Eigen::Matrix3d m;
        for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = k[i];
        s.intrinsics = m;
      }
      layout.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError(ctx + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(ctx + ": " + e.what());
  }
  validate_layout(layout);
  return layout;
}

std::unique_ptr<FeatureProvider> make_provider(const ProviderSpec& spec) {
  if (spec.kind == "synthetic") return std::make_unique<SyntheticProvider>(spec.layer_spec, spec.world);
  if (spec.kind == "fixture") return std::make_unique<FixtureProvider>(spec.layers());
  return std::make_unique<DiffusionBackboneProvider>(nullptr, spec.layers(), NoiseSchedule::linear());
}

FeatureStack load_features(const DatasetLayout& layout, const FeatureProvider& provider, int class_id,
                           const Pose& pose, const FeatureRef& ref) {
  const int t = layout.provider.timestep;
  if (layout.provider.kind == "backbone") {
    // No decoded images are stored; the adapter reports the missing backbone.
    return provider_extract(provider, ImagePatch(8), t, ref.seed);
  }
  if (layout.provider.kind == "fixture" || !ref.fixture.empty()) {
    if (ref.fixture.empty()) throw FormatError("fixture dataset entry has no fixture path");
    if (layout.provider.kind != "fixture") {
      throw FormatError("fixture path '" + ref.fixture.generic_string() + "' in a " +
                        layout.provider.kind + " dataset");
    }
    return provider_extract(provider, FixtureRef{layout.root / ref.fixture}, t, ref.seed);
  }
  return provider_extract(provider, SyntheticView{class_id, pose.rotation, ref.noise, ref.occlusion}, t,
                          ref.seed);
}

std::vector<TemplateSource> template_sources(const DatasetLayout& layout, const FeatureProvider& provider,
                                             int resolution, bool seen_only) {
  std::vector<TemplateSource> out;
  for (const auto& t : layout.templates) {
    if (seen_only && !layout.is_seen(t.class_id)) continue;
    TemplateSource s;
    s.id = t.id;
    s.cls = layout.label(t.class_id);
    s.pose = t.pose;
    s.mask = pool_mask(t.mask.pixels, t.mask.height, t.mask.width, resolution);
    s.stack = load_features(layout, provider, t.class_id, t.pose, t.features);
    s.source = t.features.fixture.empty() ? "synthetic:" + std::to_string(t.features.seed)
                                          : t.features.fixture.generic_string();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TrainSample> train_samples(const DatasetLayout& layout, const FeatureProvider& provider) {
  std::vector<TrainSample> out;
  for (const auto& s : layout.samples) {
    if (s.set != "train" || !layout.is_seen(s.class_id)) continue;
    out.push_back({load_features(layout, provider, s.class_id, s.pose, s.features), layout.label(s.class_id), s.pose});
  }
  return out;
}

std::vector<EvalSample> eval_samples(const DatasetLayout& layout, const FeatureProvider& provider) {
  std::vector<EvalSample> out;
  for (const auto& s : layout.samples) {
    if (s.set != "test") continue;
    const DatasetSplit* split = layout.split_of(s.class_id);
    out.push_back({{load_features(layout, provider, s.class_id, s.pose, s.features), layout.label(s.class_id), s.pose},
                   split != nullptr ? split->name : "all",
                   layout.is_seen(s.class_id)});
  }
  return out;
}

}  // namespace posefuse::app
