#include "posefuse/matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "posefuse/blob_io.hpp"
#include "posefuse/error.hpp"
#include "posefuse/parallel.hpp"

namespace posefuse {

namespace fs = std::filesystem;

Mask Mask::full(int size) {
  if (size < 1) throw InvalidArgument("mask size must be positive");
  return {size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size, 1)};
}

Mask Mask::empty(int size) {
  if (size < 1) throw InvalidArgument("mask size must be positive");
  return {size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size, 0)};
}

std::size_t Mask::count() const noexcept {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(),
                                                [](std::uint8_t c) { return c != 0; }));
}

Mask pool_mask(const std::vector<std::uint8_t>& pixels, int height, int width, int size) {
  if (height < 1 || width < 1) throw InvalidArgument("pixel mask must be non-empty");
  if (pixels.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeMismatch("pixel mask size disagrees with its dimensions");
  }
  Mask out = Mask::empty(size);
  // Cell u covers rows [floor(u·H/S), ceil((u+1)·H/S)), so every pixel lands in a cell
  // even when H < S.
  auto lo = [size](int u, int extent) { return static_cast<int>((static_cast<long>(u) * extent) / size); };
  auto hi = [size](int u, int extent) {
    return static_cast<int>((static_cast<long>(u + 1) * extent + size - 1) / size);
  };
  for (int u = 0; u < size; ++u) {
    for (int v = 0; v < size; ++v) {
      bool covered = false;
      for (int y = lo(u, height); y < hi(u, height) && !covered; ++y) {
        for (int x = lo(v, width); x < hi(v, width); ++x) {
          if (pixels[static_cast<std::size_t>(y) * width + x] != 0) {
            covered = true;
            break;
          }
        }
      }
      out.set(u, v, covered);
    }
  }
  return out;
}

std::vector<int> mask_to_rle(const Mask& mask) {
  std::vector<int> runs;
  bool current = false;
  int run = 0;
  for (std::uint8_t c : mask.cells) {
    const bool value = c != 0;
    if (value != current) {
      runs.push_back(run);
      current = value;
      run = 0;
    }
    ++run;
  }
  runs.push_back(run);
  return runs;
}

Mask mask_from_rle(const std::vector<int>& runs, int size) {
  Mask out = Mask::empty(size);
  std::size_t pos = 0;
  bool value = false;
  for (int run : runs) {
    if (run < 0 || pos + static_cast<std::size_t>(run) > out.cells.size()) {
      throw FormatError("mask run lengths exceed the " + std::to_string(size) + "x" +
                        std::to_string(size) + " grid");
    }
    std::fill_n(out.cells.begin() + static_cast<std::ptrdiff_t>(pos), run, value ? 1 : 0);
    pos += static_cast<std::size_t>(run);
    value = !value;
  }
  if (pos != out.cells.size()) throw FormatError("mask run lengths do not cover the grid");
  return out;
}

void TemplateGallery::validate() const {
  if (templates.empty()) throw InvalidArgument("gallery must be non-empty");
  std::set<int> ids;
  const Shape3 shape = templates.front().features.map.shape();
  for (const auto& t : templates) {
    if (!ids.insert(t.id).second) {
      throw InvalidArgument("duplicate template id " + std::to_string(t.id));
    }
    if (!(t.features.map.shape() == shape) || shape.height != shape.width) {
      throw ShapeMismatch("template " + std::to_string(t.id) + " has features " +
                          to_string(t.features.map.shape()) + ", gallery uses " + to_string(shape));
    }
    if (t.mask.size != shape.height || t.mask.cells.size() != shape.plane()) {
      throw ShapeMismatch("template " + std::to_string(t.id) + " mask does not match S");
    }
    if (t.mask.count() == 0) {
      throw InvalidArgument("template " + std::to_string(t.id) + " has an empty mask");
    }
  }
}

const Template& TemplateGallery::by_id(int id) const {
  for (const auto& t : templates) {
    if (t.id == id) return t;
  }
  throw InvalidArgument("no template with id " + std::to_string(id));
}

namespace {

void check_similarity_inputs(const Tensor& query, const Tensor& tmpl, const Mask& mask) {
  if (!(query.shape() == tmpl.shape())) {
    throw ShapeMismatch("query " + to_string(query.shape()) + " vs template " +
                        to_string(tmpl.shape()));
  }
  if (mask.size != query.height() || mask.cells.size() != query.shape().plane()) {
    throw ShapeMismatch("mask is " + std::to_string(mask.size) + "x" + std::to_string(mask.size) +
                        ", features are " + to_string(query.shape()));
  }
  if (mask.count() == 0) throw InvalidArgument("mask has no true cell");
}

struct CellStats {
  double dot = 0.0, qq = 0.0, tt = 0.0, cos = 0.0;
};

CellStats cell_stats(const Tensor& q, const Tensor& t, std::size_t cell, std::size_t plane,
                     int channels) {
  CellStats s;
  const double* qd = q.storage().data() + cell;
  const double* td = t.storage().data() + cell;
  for (int c = 0; c < channels; ++c) {
    const double a = qd[c * plane];
    const double b = td[c * plane];
    s.dot += a * b;
    s.qq += a * a;
    s.tt += b * b;
  }
  const double nq = std::sqrt(s.qq);
  const double nt = std::sqrt(s.tt);
  s.cos = (nq < kMinCellNorm || nt < kMinCellNorm) ? 0.0 : s.dot / (nq * nt);
  return s;
}

}  // namespace

double masked_similarity(const Tensor& query, const Tensor& tmpl, const Mask& mask, double delta) {
  return masked_similarity_grad(query, tmpl, mask, delta, nullptr, nullptr);
}

double masked_similarity(const AggregatedFeature& query, const AggregatedFeature& tmpl,
                         const Mask& mask, double delta) {
  return masked_similarity(query.map, tmpl.map, mask, delta);
}

double masked_similarity_grad(const Tensor& query, const Tensor& tmpl, const Mask& mask,
                              double delta, Tensor* d_query, Tensor* d_tmpl) {
  check_similarity_inputs(query, tmpl, mask);
  const std::size_t plane = query.shape().plane();
  const int channels = query.channels();
  double sum = 0.0;
  std::size_t survivors = 0;
  std::vector<std::size_t> kept;
  const bool want_grad = d_query != nullptr || d_tmpl != nullptr;
  for (std::size_t cell = 0; cell < plane; ++cell) {
    if (mask.cells[cell] == 0) continue;
    const CellStats s = cell_stats(query, tmpl, cell, plane, channels);
    if (s.cos >= delta) {
      sum += s.cos;
      ++survivors;
      if (want_grad) kept.push_back(cell);
    }
  }
  if (survivors == 0) return kNoSurvivorScore;
  const double score = sum / static_cast<double>(survivors);
  if (!want_grad) return score;

  const double inv_k = 1.0 / static_cast<double>(survivors);
  for (std::size_t cell : kept) {
    const CellStats s = cell_stats(query, tmpl, cell, plane, channels);
    const double nq = std::sqrt(s.qq);
    const double nt = std::sqrt(s.tt);
    if (nq < kMinCellNorm || nt < kMinCellNorm) continue;
    const double inv_norms = inv_k / (nq * nt);
    for (int c = 0; c < channels; ++c) {
      const std::size_t idx = c * plane + cell;
      const double a = query[idx];
      const double b = tmpl[idx];
      if (d_query != nullptr) (*d_query)[idx] += inv_norms * b - inv_k * s.cos * a / s.qq;
      if (d_tmpl != nullptr) (*d_tmpl)[idx] += inv_norms * a - inv_k * s.cos * b / s.tt;
    }
  }
  return score;
}

MatchResult retrieve(const AggregatedFeature& query, const TemplateGallery& gallery, double delta,
                     std::uint64_t model_fingerprint) {
  if (gallery.templates.empty()) throw InvalidArgument("gallery must be non-empty");
  if (gallery.model_fingerprint != model_fingerprint) {
    throw FingerprintMismatch("gallery was built by model " +
                              fingerprint_hex(gallery.model_fingerprint) + ", query model is " +
                              fingerprint_hex(model_fingerprint));
  }
  std::vector<std::size_t> order(gallery.templates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return gallery.templates[a].id < gallery.templates[b].id;
  });
  const Template* best = nullptr;
  double best_score = 0.0;
  for (std::size_t i : order) {
    const Template& t = gallery.templates[i];
    const double s = masked_similarity(query.map, t.features.map, t.mask, delta);
    if (best == nullptr || s > best_score) {
      best = &t;
      best_score = s;
    }
  }
  return {best->id, best_score, best->cls, best->pose};
}

TemplateGallery build_gallery(const std::vector<TemplateSource>& sources,
                              const AggregatorModel& model) {
  if (sources.empty()) throw InvalidArgument("gallery must be non-empty");
  const auto& spec = model.config().layer_spec;
  for (const auto& src : sources) {
    validate_stack(src.stack, spec, "template " + std::to_string(src.id));
  }
  TemplateGallery gallery;
  gallery.templates.resize(sources.size());
  parallel_for(sources.size(), [&](std::size_t i) {
    const auto& src = sources[i];
    gallery.templates[i] = {src.id, src.cls, src.pose, src.mask, model.aggregate(src.stack),
                            src.source};
  });
  gallery.model_fingerprint = model.fingerprint();
  gallery.validate();
  return gallery;
}

nlohmann::json pose_json(const Pose& pose) {
  const auto r = pose.rotation.row_major();
  nlohmann::json doc = {{"rotation", std::vector<double>(r.begin(), r.end())}};
  if (pose.translation) {
    const auto& t = *pose.translation;
    doc["translation"] = {t.x(), t.y(), t.z()};
  } else {
    doc["translation"] = nullptr;
  }
  return doc;
}

Pose parse_pose_json(const nlohmann::json& doc, const std::string& context) {
  Pose pose;
  const auto r = require_key(doc, "rotation", context).get<std::vector<double>>();
  if (r.size() != 9) throw FormatError(context + ": rotation needs 9 values");
  pose.rotation = Rotation3::from_row_major(r);
  if (doc.contains("translation") && !doc["translation"].is_null()) {
    const auto t = doc["translation"].get<std::vector<double>>();
    if (t.size() != 3) throw FormatError(context + ": translation needs 3 values");
    pose.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  }
  return pose;
}

void gallery_save(const TemplateGallery& gallery, const fs::path& dir, const nlohmann::json& config) {
  gallery.validate();
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec) throw IoError("cannot create '" + (dir / "features").string() + "': " + ec.message());
  const Shape3 shape = gallery.templates.front().features.map.shape();
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& t : gallery.templates) {
    const std::string file = "features/" + std::to_string(t.id) + ".bin";
    write_blob(dir / file, t.features.map.values());
    entries.push_back({{"id", t.id},
                       {"class_id", t.cls.id},
                       {"class_name", t.cls.name},
                       {"pose", pose_json(t.pose)},
                       {"mask_rle", mask_to_rle(t.mask)},
                       {"file", file},
                       {"source", t.source}});
  }
  write_json(dir / "gallery.json", {{"version", 1},
                                    {"model_fingerprint", fingerprint_hex(gallery.model_fingerprint)},
                                    {"channels", shape.channels},
                                    {"resolution", shape.height},
                                    {"dtype", "f64le"},
                                    {"config", config},
                                    {"templates", std::move(entries)}});
}

TemplateGallery gallery_load(const fs::path& dir) {
  const fs::path index = dir / "gallery.json";
  if (!fs::is_regular_file(index)) throw FormatError("'" + index.string() + "' not found");
  const auto doc = read_json(index);
  const std::string ctx = index.string();
  TemplateGallery gallery;
  try {
    if (require_key(doc, "version", ctx).get<int>() != 1) {
      throw VersionMismatch(ctx + ": unsupported version " + doc["version"].dump());
    }
    if (require_key(doc, "dtype", ctx).get<std::string>() != "f64le") {
      throw ShapeMismatch(ctx + ": gallery features must be f64le");
    }
    gallery.model_fingerprint =
        parse_fingerprint_hex(require_key(doc, "model_fingerprint", ctx).get<std::string>());
    const int channels = require_key(doc, "channels", ctx).get<int>();
    const int size = require_key(doc, "resolution", ctx).get<int>();
    if (channels < 1 || size < 1) throw FormatError(ctx + ": channels and resolution must be positive");
    const Shape3 shape{channels, size, size};
    for (const auto& e : require_key(doc, "templates", ctx)) {
      Template t;
      t.id = require_key(e, "id", ctx).get<int>();
      const std::string tctx = ctx + " template " + std::to_string(t.id);
      t.cls = {require_key(e, "class_id", tctx).get<int>(),
               require_key(e, "class_name", tctx).get<std::string>()};
      t.pose = parse_pose_json(require_key(e, "pose", tctx), tctx);
      t.mask = mask_from_rle(require_key(e, "mask_rle", tctx).get<std::vector<int>>(), size);
      t.source = e.value("source", std::string());
      t.features.map = Tensor(shape, read_blob_f64(dir / require_key(e, "file", tctx).get<std::string>(),
                                                   shape.size(), "template " + std::to_string(t.id)));
      gallery.templates.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(ctx + ": " + e.what());
  }
  gallery.validate();
  return gallery;
}

nlohmann::json gallery_config(const fs::path& dir) {
  const auto doc = read_json(dir / "gallery.json");
  return doc.value("config", nlohmann::json::object());
}

}  // namespace posefuse
