#include "posefuse/evaluation.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "posefuse/blob_io.hpp"
#include "posefuse/error.hpp"
#include "posefuse/parallel.hpp"

namespace posefuse {

const EvalRow& EvalReport::row(const std::string& split_name) const {
  for (const auto& r : rows) {
    if (r.split_name == split_name) return r;
  }
  throw InvalidArgument("report has no row '" + split_name + "'");
}

namespace {

std::string membership_of(bool seen) { return seen ? "seen" : "unseen"; }

EvalRow make_row(std::string name, std::string membership, std::size_t n, std::size_t correct) {
  return {std::move(name), std::move(membership), n, correct,
          n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n)};
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

}  // namespace

EvalReport evaluate_acc(const std::vector<EvalSample>& dataset, const TemplateGallery& gallery,
                        const AggregatorModel& model, double delta, double lambda_deg) {
  if (dataset.empty()) throw InvalidArgument("evaluation dataset is empty");
  gallery.validate();
  const std::uint64_t fp = model.fingerprint();
  if (gallery.model_fingerprint != fp) {
    throw FingerprintMismatch("gallery was built by model " + fingerprint_hex(gallery.model_fingerprint) +
                              ", evaluation model is " + fingerprint_hex(fp));
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    validate_stack(dataset[i].sample.query_stack, model.config().layer_spec,
                   "evaluation sample " + std::to_string(i));
  }

  EvalReport report;
  report.model_fingerprint = fp;
  report.config = {{"delta", delta}, {"lambda_deg", lambda_deg}};
  report.outcomes.resize(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    const auto& s = dataset[i].sample;
    const MatchResult m = retrieve(model.aggregate(s.query_stack), gallery, delta, fp);
    report.outcomes[i] = {m.template_id, m.score,
                          acc_at_threshold(m.cls, m.pose.rotation, s.gt_class, s.gt_pose.rotation,
                                           lambda_deg)};
  });

  struct Tally {
    std::string split;
    bool seen;
    std::size_t n = 0, correct = 0;
  };
  std::vector<Tally> groups;
  std::size_t n_seen = 0, c_seen = 0, n_unseen = 0, c_unseen = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& d = dataset[i];
    const int ok = report.outcomes[i].correct;
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Tally& g) {
      return g.split == d.split && g.seen == d.seen;
    });
    if (it == groups.end()) {
      groups.push_back({d.split, d.seen});
      it = groups.end() - 1;
    }
    ++it->n;
    it->correct += static_cast<std::size_t>(ok);
    (d.seen ? n_seen : n_unseen) += 1;
    (d.seen ? c_seen : c_unseen) += static_cast<std::size_t>(ok);
  }
  for (const auto& g : groups) report.rows.push_back(make_row(g.split, membership_of(g.seen), g.n, g.correct));
  if (n_seen > 0) report.rows.push_back(make_row("seen", "seen", n_seen, c_seen));
  if (n_unseen > 0) report.rows.push_back(make_row("unseen", "unseen", n_unseen, c_unseen));
  report.rows.push_back(make_row("overall", "all", n_seen + n_unseen, c_seen + c_unseen));
  return report;
}

std::string report_text(const EvalReport& report) {
  std::ostringstream out;
  out << "report: posefuse-eval\n";
  out << "version: 1\n";
  out << "model_fingerprint: " << fingerprint_hex(report.model_fingerprint) << "\n";
  out << "config: " << report.config.dump() << "\n";
  for (const auto& r : report.rows) {
    out << "row: split=" << r.split_name << " membership=" << r.membership << " n=" << r.n_samples
        << " correct=" << r.n_correct << " accuracy=" << fmt("%.6f", r.accuracy) << "\n";
  }
  return out.str();
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "split,seen,unseen\n";
  std::vector<std::string> splits;
  for (const auto& r : report.rows) {
    if (r.split_name == "seen" || r.split_name == "unseen" || r.split_name == "overall") continue;
    if (std::find(splits.begin(), splits.end(), r.split_name) == splits.end()) {
      splits.push_back(r.split_name);
    }
  }
  auto cell = [&](const std::string& split, const std::string& membership) -> std::string {
    for (const auto& r : report.rows) {
      if (r.split_name == split && r.membership == membership) return fmt("%.6f", r.accuracy);
    }
    return "-";
  };
  for (const auto& s : splits) out << s << ',' << cell(s, "seen") << ',' << cell(s, "unseen") << "\n";
  out << "overall," << cell("seen", "seen") << ',' << cell("unseen", "unseen") << "\n";
  return out.str();
}

DepthImage::DepthImage(int h, int w, double fill) : height(h), width(w) {
  if (h < 1 || w < 1) throw InvalidArgument("depth image must be non-empty");
  depth.assign(static_cast<std::size_t>(h) * w, fill);
}

double vsd_error(const DepthImage& d_est, const DepthImage& d_gt, double tau) {
  if (d_est.height != d_gt.height || d_est.width != d_gt.width ||
      d_est.depth.size() != d_gt.depth.size()) {
    throw ShapeMismatch("depth images differ in size");
  }
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  std::size_t uni = 0, agree = 0;
  for (std::size_t i = 0; i < d_est.depth.size(); ++i) {
    const double a = d_est.depth[i];
    const double b = d_gt.depth[i];
    if (a < 0.0 || b < 0.0) throw InvalidArgument("depth values must be nonnegative");
    const bool va = a > 0.0;
    const bool vb = b > 0.0;
    if (va || vb) ++uni;
    if (va && vb && std::abs(a - b) < tau) ++agree;
  }
  if (uni == 0) return 0.0;
  return 1.0 - static_cast<double>(agree) / static_cast<double>(uni);
}

double vsd_recall(const std::vector<double>& errors, double threshold) {
  if (errors.empty()) throw InvalidArgument("vsd_recall needs at least one error");
  std::size_t hits = 0;
  for (double e : errors) {
    if (!(e >= 0.0 && e <= 1.0)) throw InvalidArgument("VSD errors must lie in [0, 1]");
    if (e < threshold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

PcaResult feature_pca(const Tensor& feat) {
  const int c = feat.channels();
  if (c < 3) throw InvalidArgument("PCA visualization needs at least 3 channels");
  const std::size_t n = feat.shape().plane();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), c);
  for (int ch = 0; ch < c; ++ch) {
    const auto plane = feat.channel(ch);
    double mean = 0.0;
    for (double v : plane) mean += v;
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) x(static_cast<Eigen::Index>(i), ch) = plane[i] - mean;
  }
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalFailure("PCA eigendecomposition failed");

  PcaResult out;
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  for (int k = c - 1; k >= 0; --k) out.explained_variance.push_back(std::max(0.0, values(k)));
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd axis = vectors.col(c - 1 - k);
    Eigen::Index peak = 0;
    for (Eigen::Index i = 1; i < axis.size(); ++i) {
      if (std::abs(axis(i)) > std::abs(axis(peak))) peak = i;
    }
    if (axis(peak) < 0.0) axis = -axis;
    out.axes.emplace_back(axis.data(), axis.data() + axis.size());
  }
  return out;
}

RgbImage pca_visualize(const AggregatedFeature& feat) {
  const Tensor& map = feat.map;
  const PcaResult pca = feature_pca(map);
  const int c = map.channels();
  const std::size_t n = map.shape().plane();
  std::vector<double> mean(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (double v : map.channel(ch)) mean[ch] += v;
    mean[ch] /= static_cast<double>(n);
  }
  std::vector<std::vector<double>> scores(3, std::vector<double>(n, 0.0));
  std::vector<double> lo(3), hi(3);
  for (int k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch) s += (map.channel(ch)[i] - mean[ch]) * pca.axes[k][ch];
      scores[k][i] = s;
    }
    const auto [mn, mx] = std::minmax_element(scores[k].begin(), scores[k].end());
    lo[k] = *mn;
    hi[k] = *mx;
  }
  const double widest = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  double magnitude = 0.0;
  for (double v : map.values()) magnitude = std::max(magnitude, std::abs(v));
  const bool constant = !(widest > 1e-12 * magnitude);
  RgbImage img{map.height(), map.width(), std::vector<double>(n * 3, 0.5)};
  for (int k = 0; k < 3; ++k) {
    const double range = hi[k] - lo[k];
    // Components spanning only rounding noise of the leading one are flat.
    if (constant || range <= 1e-9 * widest) continue;
    for (std::size_t i = 0; i < n; ++i) img.rgb[i * 3 + k] = (scores[k][i] - lo[k]) / range;
  }
  return img;
}

}  // namespace posefuse
