#include "posefuse/app/run_config.hpp"

#include <set>

#include "posefuse/blob_io.hpp"

namespace posefuse::app {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t RunConfig::require_seed(const char* command) const {
  if (!seed) throw ConfigError(std::string(command) + " needs --seed (or \"seed\" in the config file)");
  return *seed;
}

AggregatorConfig RunConfig::model_config(const std::vector<Shape3>& layer_spec) const {
  AggregatorConfig c;
  c.arch = arch;
  c.layer_spec = layer_spec;
  c.channels = channels;
  c.resolution = resolution;
  c.mid_channels = mid_channels;
  c.hidden = hidden;
  c.seed = seed.value_or(0);
  try {
    return c.resolved();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.arch = arch;
  t.seed = seed.value_or(0);
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return t;
}

namespace {

void check_keys(const json& doc, const std::set<std::string>& allowed, const std::string& where) {
  if (!doc.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    if (!allowed.count(key)) throw ConfigError("config: unknown field '" + where + key + "'");
  }
}

template <typename T>
void read(const json& doc, const char* key, T& target, const std::string& where) {
  if (!doc.contains(key)) return;
  try {
    target = doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + where + key + "' has the wrong type");
  }
}

void read_path(const json& doc, const char* key, fs::path& target, const std::string& where) {
  std::string text;
  if (!doc.contains(key)) return;
  read(doc, key, text, where);
  target = text;
}

}  // namespace

RunConfig apply_config_json(const json& doc, RunConfig c) {
  check_keys(doc, {"seed", "paths", "model", "train", "eval", "provider"}, "");
  if (doc.contains("seed")) {
    std::uint64_t s = 0;
    read(doc, "seed", s, "");
    c.seed = s;
  }
  if (doc.contains("paths")) {
    const json& p = doc["paths"];
    check_keys(p, {"dataset", "gallery", "checkpoint", "out"}, "paths.");
    read_path(p, "dataset", c.dataset, "paths.");
    read_path(p, "gallery", c.gallery, "paths.");
    read_path(p, "checkpoint", c.checkpoint, "paths.");
    read_path(p, "out", c.out, "paths.");
  }
  if (doc.contains("model")) {
    const json& m = doc["model"];
    check_keys(m, {"arch", "C", "S", "C_mid", "hidden"}, "model.");
    if (m.contains("arch")) {
      std::string arch;
      read(m, "arch", arch, "model.");
      try {
        c.arch = parse_arch(arch);
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config: model.arch: ") + e.what());
      }
    }
    read(m, "C", c.channels, "model.");
    read(m, "S", c.resolution, "model.");
    read(m, "C_mid", c.mid_channels, "model.");
    read(m, "hidden", c.hidden, "model.");
  }
  if (doc.contains("train")) {
    const json& t = doc["train"];
    check_keys(t, {"epochs", "learning_rate", "tau", "M", "delta", "batch_size"}, "train.");
    read(t, "epochs", c.train.epochs, "train.");
    read(t, "learning_rate", c.train.learning_rate, "train.");
    read(t, "tau", c.train.tau, "train.");
    read(t, "M", c.train.M, "train.");
    read(t, "delta", c.train.delta, "train.");
    read(t, "batch_size", c.train.batch_size, "train.");
  }
  if (doc.contains("eval")) {
    const json& e = doc["eval"];
    check_keys(e, {"delta", "lambda_deg"}, "eval.");
    read(e, "delta", c.delta, "eval.");
    read(e, "lambda_deg", c.lambda_deg, "eval.");
  }
  if (doc.contains("provider")) {
    const json& p = doc["provider"];
    check_keys(p, {"timestep"}, "provider.");
    if (p.contains("timestep")) {
      int t = 0;
      read(p, "timestep", t, "provider.");
      c.timestep = t;
    }
  }
  return c;
}

RunConfig load_run_config(const fs::path& file, RunConfig base) {
  if (!fs::is_regular_file(file)) throw ConfigError("config file '" + file.string() + "' not found");
  json doc;
  try {
    doc = read_json(file);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return apply_config_json(doc, std::move(base));
}

json run_config_json(const RunConfig& c) {
  json doc = {{"seed", c.seed ? json(*c.seed) : json(nullptr)},
              {"paths",
               {{"dataset", c.dataset.generic_string()},
                {"gallery", c.gallery.generic_string()},
                {"checkpoint", c.checkpoint.generic_string()},
                {"out", c.out.generic_string()}}},
              {"model",
               {{"arch", to_string(c.arch)},
                {"C", c.channels},
                {"S", c.resolution},
                {"C_mid", c.mid_channels},
                {"hidden", c.hidden}}},
              {"train",
               {{"epochs", c.train.epochs},
                {"learning_rate", c.train.learning_rate},
                {"tau", c.train.tau},
                {"M", c.train.M},
                {"delta", c.train.delta},
                {"batch_size", c.train.batch_size}}},
              {"eval", {{"delta", c.delta}, {"lambda_deg", c.lambda_deg}}}};
  doc["provider"] = json::object();
  if (c.timestep) doc["provider"]["timestep"] = *c.timestep;
  return doc;
}

}  // namespace posefuse::app
