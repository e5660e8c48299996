#include "posefuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "posefuse/blob_io.hpp"
#include "posefuse/error.hpp"
#include "posefuse/parallel.hpp"
#include "posefuse/synthetic.hpp"

namespace posefuse {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTagShuffle = 0x5348;
constexpr std::uint64_t kTagPairs = 0x5052;

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1, got " + std::to_string(epochs));
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be finite and >= 0");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("tau must be > 0");
  if (M < 2) throw InvalidArgument("M must be >= 2, got " + std::to_string(M));
  if (!(delta >= -1.0 && delta <= 1.0)) throw InvalidArgument("delta must lie in [-1, 1]");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
}

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"arch", to_string(c.arch)}, {"epochs", c.epochs},   {"learning_rate", c.learning_rate},
          {"tau", c.tau},              {"M", c.M},             {"delta", c.delta},
          {"seed", c.seed},            {"batch_size", c.batch_size}};
}

TrainConfig parse_train_config_json(const nlohmann::json& doc) {
  const std::string ctx = "train config";
  try {
    TrainConfig c;
    c.arch = parse_arch(require_key(doc, "arch", ctx).get<std::string>());
    c.epochs = require_key(doc, "epochs", ctx).get<int>();
    c.learning_rate = require_key(doc, "learning_rate", ctx).get<double>();
    c.tau = require_key(doc, "tau", ctx).get<double>();
    c.M = require_key(doc, "M", ctx).get<int>();
    c.delta = require_key(doc, "delta", ctx).get<double>();
    c.seed = require_key(doc, "seed", ctx).get<std::uint64_t>();
    c.batch_size = require_key(doc, "batch_size", ctx).get<int>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(ctx + ": " + e.what());
  }
}

void adam_step(std::vector<Parameter>& params, const Gradients& grads, AdamState& state,
               double learning_rate) {
  if (grads.size() != params.size()) throw ShapeMismatch("gradient count disagrees with parameters");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.size(), 0.0);
      state.v.emplace_back(p.value.size(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p].value;
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = AdamState::kBeta1 * m[k] + (1.0 - AdamState::kBeta1) * g[k];
      v[k] = AdamState::kBeta2 * v[k] + (1.0 - AdamState::kBeta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      value[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  }
}

namespace {

struct TemplateMeta {
  int id;
  const ClassLabel* cls;
  const Rotation3* rotation;
};

PairBatch pairs_from_meta(const ClassLabel& gt_class, const Rotation3& gt_rotation,
                          std::vector<TemplateMeta> meta, int M, std::uint64_t seed) {
  if (M < 2) throw InvalidArgument("M must be >= 2");
  std::sort(meta.begin(), meta.end(),
            [](const TemplateMeta& a, const TemplateMeta& b) { return a.id < b.id; });
  const TemplateMeta* best = nullptr;
  double best_dist = std::numeric_limits<double>::infinity();
  std::vector<double> dist(meta.size(), 0.0);
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (meta[i].cls->id != gt_class.id) continue;
    dist[i] = geodesic_distance(*meta[i].rotation, gt_rotation);
    if (dist[i] < best_dist) {
      best = &meta[i];
      best_dist = dist[i];
    }
  }
  if (best == nullptr) {
    throw InvalidArgument("no template of class " + std::to_string(gt_class.id) +
                          " to serve as the positive");
  }
  // The positive never doubles as a negative, even when it lies beyond the exclusion radius.
  std::vector<int> pool;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (&meta[i] == best) continue;
    if (meta[i].cls->id != gt_class.id || dist[i] > kNegativeMinDistance) pool.push_back(meta[i].id);
  }
  const std::size_t need = static_cast<std::size_t>(M - 1);
  if (pool.size() < need) {
    throw InvalidArgument("insufficient negatives: need " + std::to_string(need) + ", have " +
                          std::to_string(pool.size()));
  }
  // Partial Fisher-Yates over the id-sorted pool.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < need; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(need);
  return {best->id, std::move(pool)};
}

}  // namespace

PairBatch build_pairs(const ClassLabel& gt_class, const Rotation3& gt_rotation,
                      const std::vector<TemplateSource>& templates, int M, std::uint64_t seed) {
  std::vector<TemplateMeta> meta;
  meta.reserve(templates.size());
  for (const auto& t : templates) meta.push_back({t.id, &t.cls, &t.pose.rotation});
  return pairs_from_meta(gt_class, gt_rotation, std::move(meta), M, seed);
}

PairBatch build_pairs(const TrainSample& sample, const TemplateGallery& gallery, int M,
                      std::uint64_t seed) {
  std::vector<TemplateMeta> meta;
  meta.reserve(gallery.templates.size());
  for (const auto& t : gallery.templates) meta.push_back({t.id, &t.cls, &t.pose.rotation});
  return pairs_from_meta(sample.gt_class, sample.gt_pose.rotation, std::move(meta), M, seed);
}

double infonce_grad(double pos_score, std::span<const double> neg_scores, double tau,
                    double& d_pos, std::vector<double>& d_neg) {
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  double peak = pos_score / tau;
  for (double s : neg_scores) peak = std::max(peak, s / tau);
  const double e_pos = std::exp(pos_score / tau - peak);
  double total = e_pos;
  std::vector<double> e_neg(neg_scores.size());
  for (std::size_t k = 0; k < neg_scores.size(); ++k) {
    e_neg[k] = std::exp(neg_scores[k] / tau - peak);
    total += e_neg[k];
  }
  const double loss = std::log(total) - (pos_score / tau - peak);
  d_pos = (e_pos / total - 1.0) / tau;
  d_neg.resize(neg_scores.size());
  for (std::size_t k = 0; k < neg_scores.size(); ++k) d_neg[k] = e_neg[k] / total / tau;
  return std::max(loss, 0.0);
}

double infonce_loss(double pos_score, std::span<const double> neg_scores, double tau) {
  double d_pos = 0.0;
  std::vector<double> d_neg;
  return infonce_grad(pos_score, neg_scores, tau, d_pos, d_neg);
}

namespace {

std::vector<Tensor> stack_inputs(const FeatureStack& stack) {
  std::vector<Tensor> out;
  out.reserve(stack.layers.size());
  for (const auto& l : stack.layers) out.push_back(to_double(l.map));
  return out;
}

// Loss for one query; adds its parameter gradient into `grads`.
double sample_loss(const AggregatorModel& model, const std::vector<Tensor>& query,
                   const std::vector<std::vector<Tensor>>& template_inputs,
                   const std::vector<const Mask*>& masks, const std::vector<std::size_t>& idx,
                   const TrainConfig& config, Gradients& grads) {
  ForwardTrace q_trace;
  const Tensor q = model.forward(query, &q_trace);
  const std::size_t m = idx.size();
  std::vector<ForwardTrace> t_traces(m);
  std::vector<Tensor> d_q(m, Tensor(q.shape()));
  std::vector<Tensor> d_t(m, Tensor(q.shape()));
  std::vector<double> scores(m);
  for (std::size_t j = 0; j < m; ++j) {
    const Tensor t = model.forward(template_inputs[idx[j]], &t_traces[j]);
    scores[j] = masked_similarity_grad(q, t, *masks[idx[j]], config.delta, &d_q[j], &d_t[j]);
  }
  double d_pos = 0.0;
  std::vector<double> d_neg;
  const double loss =
      infonce_grad(scores[0], std::span<const double>(scores).subspan(1), config.tau, d_pos, d_neg);

  Tensor upstream_q(q.shape());
  auto uq = upstream_q.values();
  for (std::size_t j = 0; j < m; ++j) {
    const double ds = j == 0 ? d_pos : d_neg[j - 1];
    const auto g_q = d_q[j].values();
    for (std::size_t k = 0; k < uq.size(); ++k) uq[k] += ds * g_q[k];
    for (auto& v : d_t[j].values()) v *= ds;
  }
  model.backward(q_trace, upstream_q, grads);
  for (std::size_t j = 0; j < m; ++j) model.backward(t_traces[j], d_t[j], grads);
  return loss;
}

bool gradients_finite(const Gradients& grads) {
  for (const auto& g : grads) {
    if (!all_finite(std::span<const double>(g))) return false;
  }
  return true;
}

}  // namespace

Checkpoint train(const std::vector<TrainSample>& dataset,
                 const std::vector<TemplateSource>& templates,
                 const AggregatorConfig& model_config, const TrainConfig& config,
                 const Checkpoint* resume, const TrainHooks& hooks) {
  config.validate();
  if (dataset.empty()) throw InvalidArgument("training dataset is empty");
  if (templates.empty()) throw InvalidArgument("training needs at least one template");
  AggregatorConfig cfg = model_config;
  cfg.arch = config.arch;
  cfg = cfg.resolved();

  Checkpoint ck = resume != nullptr ? *resume
                                    : Checkpoint{AggregatorModel(cfg), AdamState{}, config, 0, {}};
  if (resume != nullptr) {
    if (!(resume->model.config() == cfg)) {
      throw InvalidArgument("resume checkpoint was trained with a different model configuration");
    }
    TrainConfig same = resume->config;
    same.epochs = config.epochs;
    if (!(same == config)) {
      throw InvalidArgument("resume checkpoint was trained with a different training configuration");
    }
    if (resume->epoch > config.epochs) {
      throw InvalidArgument("resume checkpoint already completed " + std::to_string(resume->epoch) +
                            " epochs");
    }
  }
  ck.config = config;
  if (ck.optimizer.m.empty()) {
    for (const auto& p : ck.model.parameters()) {
      ck.optimizer.m.emplace_back(p.value.size(), 0.0);
      ck.optimizer.v.emplace_back(p.value.size(), 0.0);
    }
  }

  std::vector<std::vector<Tensor>> query_inputs;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    validate_stack(dataset[i].query_stack, cfg.layer_spec, "training sample " + std::to_string(i));
    query_inputs.push_back(stack_inputs(dataset[i].query_stack));
  }
  std::vector<std::vector<Tensor>> template_inputs;
  std::vector<const Mask*> masks;
  std::map<int, std::size_t> index_of;
  for (std::size_t i = 0; i < templates.size(); ++i) {
    validate_stack(templates[i].stack, cfg.layer_spec, "template " + std::to_string(templates[i].id));
    if (templates[i].mask.size != cfg.resolution || templates[i].mask.count() == 0) {
      throw ShapeMismatch("template " + std::to_string(templates[i].id) +
                          " mask must be a non-empty S×S grid");
    }
    if (!index_of.emplace(templates[i].id, i).second) {
      throw InvalidArgument("duplicate template id " + std::to_string(templates[i].id));
    }
    template_inputs.push_back(stack_inputs(templates[i].stack));
    masks.push_back(&templates[i].mask);
  }

  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = ck.epoch; epoch < config.epochs; ++epoch) {
    const Checkpoint last_good = ck;
    if (hooks.on_epoch_gallery) hooks.on_epoch_gallery(epoch, build_gallery(templates, ck.model));

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(config.seed, kTagShuffle, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++batch_index) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::vector<Gradients> per_sample(count);
      std::vector<double> losses(count);
      parallel_for(count, [&](std::size_t k) {
        const std::size_t s = order[start + k];
        const PairBatch pairs =
            build_pairs(dataset[s].gt_class, dataset[s].gt_pose.rotation, templates, config.M,
                        mix_seed(config.seed, kTagPairs, static_cast<std::uint64_t>(epoch), s));
        std::vector<std::size_t> idx{index_of.at(pairs.positive)};
        for (int id : pairs.negatives) idx.push_back(index_of.at(id));
        per_sample[k] = ck.model.zero_gradients();
        losses[k] = sample_loss(ck.model, query_inputs[s], template_inputs, masks, idx, config,
                                per_sample[k]);
      });

      Gradients grads = ck.model.zero_gradients();
      double loss = 0.0;
      for (std::size_t k = 0; k < count; ++k) {
        loss += losses[k];
        for (std::size_t p = 0; p < grads.size(); ++p) {
          auto& g = grads[p];
          const auto& src = per_sample[k][p];
          for (std::size_t e = 0; e < g.size(); ++e) g[e] += src[e];
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      loss *= inv;
      for (auto& g : grads) {
        for (auto& v : g) v *= inv;
      }
      if (!std::isfinite(loss) || !gradients_finite(grads)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index),
                               last_good);
      }
      adam_step(ck.model.parameters(), grads, ck.optimizer, config.learning_rate);
      ck.history.push_back({epoch, batch_index, loss});
      if (hooks.on_batch) hooks.on_batch(ck.history.back());
    }
    ck.epoch = epoch + 1;
  }
  return ck;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void checkpoint_save(const Checkpoint& ck, const fs::path& dir) {
  save_model(ck.model, dir);
  const auto& params = ck.model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const bool have = p < ck.optimizer.m.size();
    const std::vector<double> zeros(params[p].value.size(), 0.0);
    write_blob(dir / ("adam_m_" + params[p].name + ".bin"),
               std::span<const double>(have ? ck.optimizer.m[p] : zeros));
    write_blob(dir / ("adam_v_" + params[p].name + ".bin"),
               std::span<const double>(have ? ck.optimizer.v[p] : zeros));
  }
  write_json(dir / "train_state.json",
             {{"version", 1},
              {"epoch", ck.epoch},
              {"adam_step", ck.optimizer.step},
              {"train_config", train_config_json(ck.config)},
              {"model_fingerprint", fingerprint_hex(ck.model.fingerprint())},
              {"layer_spec", config_json(ck.model.config())["layer_spec"]}});
  std::ostringstream csv;
  csv << "epoch,batch,loss\n";
  for (const auto& r : ck.history) {
    csv << r.epoch << ',' << r.batch << ',' << format_double(r.loss) << '\n';
  }
  write_text(dir / "loss.csv", csv.str());
}

Checkpoint checkpoint_load(const fs::path& dir,
                           const std::optional<std::vector<Shape3>>& expected_layer_spec) {
  const fs::path state_file = dir / "train_state.json";
  if (!fs::is_regular_file(state_file)) throw FormatError("'" + state_file.string() + "' not found");
  const auto state = read_json(state_file);
  const std::string ctx = state_file.string();
  try {
    if (require_key(state, "version", ctx).get<int>() != 1) {
      throw VersionMismatch(ctx + ": unsupported version " + state["version"].dump());
    }
    AggregatorModel model = load_model(dir);
    if (expected_layer_spec && *expected_layer_spec != model.config().layer_spec) {
      throw FingerprintMismatch(ctx + ": checkpoint layer_spec does not match the provider's layers");
    }
    const std::string stored = require_key(state, "model_fingerprint", ctx).get<std::string>();
    if (parse_fingerprint_hex(stored) != model.fingerprint()) {
      throw FingerprintMismatch(ctx + ": parameters do not match the recorded fingerprint " + stored);
    }
    Checkpoint ck{std::move(model), AdamState{},
                  parse_train_config_json(require_key(state, "train_config", ctx)),
                  require_key(state, "epoch", ctx).get<int>(), {}};
    ck.optimizer.step = require_key(state, "adam_step", ctx).get<std::uint64_t>();
    for (const auto& p : ck.model.parameters()) {
      ck.optimizer.m.push_back(
          read_blob_f64(dir / ("adam_m_" + p.name + ".bin"), p.value.size(), "adam_m " + p.name));
      ck.optimizer.v.push_back(
          read_blob_f64(dir / ("adam_v_" + p.name + ".bin"), p.value.size(), "adam_v " + p.name));
    }
    std::istringstream csv(read_text(dir / "loss.csv"));
    std::string line;
    std::getline(csv, line);
    if (line != "epoch,batch,loss") throw FormatError((dir / "loss.csv").string() + ": bad header");
    while (std::getline(csv, line)) {
      if (line.empty()) continue;
      LossRecord r;
      char* end = nullptr;
      r.epoch = static_cast<int>(std::strtol(line.c_str(), &end, 10));
      if (*end != ',') throw FormatError("loss.csv: malformed line '" + line + "'");
      r.batch = static_cast<int>(std::strtol(end + 1, &end, 10));
      if (*end != ',') throw FormatError("loss.csv: malformed line '" + line + "'");
      r.loss = std::strtod(end + 1, &end);
      if (*end != '\0') throw FormatError("loss.csv: malformed line '" + line + "'");
      ck.history.push_back(r);
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(ctx + ": " + e.what());
  }
}

}  // namespace posefuse
