#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "posefuse/evaluation.hpp"
#include "posefuse/synthetic.hpp"
#include "support.hpp"

namespace posefuse {
namespace {

// ---------------------------------------------------------------- VSD

TEST(Vsd, KnownValues) {
  DepthImage a(2, 2, 1.0), b(2, 2, 1.0);
  EXPECT_EQ(vsd_error(a, b), 0.0);
  b = DepthImage(2, 2, 1.5);
  EXPECT_EQ(vsd_error(a, b), 1.0);
  b = DepthImage(2, 2, 1.0);
  b.at(0, 0) = b.at(0, 1) = 1.5;
  EXPECT_DOUBLE_EQ(vsd_error(a, b), 0.5);
  // Pixels valid in only one image are in the union but never agree.
  b = DepthImage(2, 2, 0.0);
  b.at(1, 1) = 1.0;
  EXPECT_DOUBLE_EQ(vsd_error(a, b), 0.75);
  EXPECT_EQ(vsd_error(DepthImage(3, 3), DepthImage(3, 3)), 0.0);
}

TEST(Vsd, ToleranceIsStrict) {
  DepthImage a(1, 1, 1.0), b(1, 1, 1.0);
  b.at(0, 0) = 1.0 + 0.5;
  EXPECT_EQ(vsd_error(a, b, 0.5), 1.0);
  EXPECT_EQ(vsd_error(a, b, 0.5000001), 0.0);
}

TEST(Vsd, Errors) {
  EXPECT_THROW(vsd_error(DepthImage(2, 2), DepthImage(2, 3)), ShapeMismatch);
  EXPECT_THROW(vsd_error(DepthImage(2, 2), DepthImage(2, 2), 0.0), InvalidArgument);
  DepthImage neg(1, 1, -1.0);
  EXPECT_THROW(vsd_error(neg, DepthImage(1, 1)), InvalidArgument);
  EXPECT_THROW(DepthImage(0, 3), InvalidArgument);
}

TEST(Vsd, SymmetricBoundedAndMonotoneInTau) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    DepthImage a(6, 5), b(6, 5);
    for (std::size_t i = 0; i < a.depth.size(); ++i) {
      a.depth[i] = u(rng) < 0.2 ? 0.0 : 1.0 + 0.1 * u(rng);
      b.depth[i] = u(rng) < 0.2 ? 0.0 : 1.0 + 0.1 * u(rng);
    }
    const double e = vsd_error(a, b, 0.02);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 1.0);
    EXPECT_EQ(e, vsd_error(b, a, 0.02));
    EXPECT_LE(vsd_error(a, b, 0.05), e);
    EXPECT_EQ(vsd_error(a, a, 0.02), 0.0);
  }
}

TEST(VsdRecall, StrictThreshold) {
  EXPECT_EQ(vsd_recall({0.1, 0.29, 0.3, 0.9}), 0.5);
  EXPECT_EQ(vsd_recall({0.3}), 0.0);
  EXPECT_EQ(vsd_recall({std::nextafter(0.3, 0.0)}), 1.0);
  EXPECT_EQ(vsd_recall({0.0, 1.0}), 0.5);
  EXPECT_THROW(vsd_recall({}), InvalidArgument);
  EXPECT_THROW(vsd_recall({1.5}), InvalidArgument);
  EXPECT_THROW(vsd_recall({std::nan("")}), InvalidArgument);
}

// ---------------------------------------------------------------- PCA

// Cyclic Jacobi eigenvalue iteration on a symmetric matrix; returns (values, vectors as
// columns) sorted by descending value.
std::pair<std::vector<double>, std::vector<std::vector<double>>> jacobi_eigen(
    std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return a[i][i] > a[j][j]; });
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
  for (auto i : order) {
    values.push_back(a[i][i]);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    vectors.push_back(col);
  }
  return {values, vectors};
}

std::vector<std::vector<double>> covariance(const Tensor& f) {
  const int c = f.channels();
  const std::size_t n = f.shape().plane();
  std::vector<double> mean(c, 0.0);
  for (int i = 0; i < c; ++i) {
    for (double x : f.channel(i)) mean[i] += x;
    mean[i] /= static_cast<double>(n);
  }
  std::vector<std::vector<double>> cov(c, std::vector<double>(c, 0.0));
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      for (std::size_t k = 0; k < n; ++k) cov[i][j] += (f.channel(i)[k] - mean[i]) * (f.channel(j)[k] - mean[j]);
      cov[i][j] /= static_cast<double>(n);
    }
  }
  return cov;
}

TEST(Pca, MatchesJacobiOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    // Anisotropic scales keep the leading eigenvalues well separated.
    Tensor f = testing::random_tensor({6, 5, 5}, rng);
    for (int c = 0; c < 6; ++c) {
      for (auto& v : f.channel(c)) v *= 1.0 + 2.0 * (5 - c);
    }
    const PcaResult p = feature_pca(f);
    const auto [values, vectors] = jacobi_eigen(covariance(f));
    ASSERT_EQ(p.explained_variance.size(), 6u);
    for (int k = 0; k < 6; ++k) EXPECT_NEAR(p.explained_variance[k], std::max(0.0, values[k]), 1e-9 * values[0]);
    for (int k = 0; k < 3; ++k) {
      double dot = 0.0, norm = 0.0;
      for (int c = 0; c < 6; ++c) {
        dot += p.axes[k][c] * vectors[k][c];
        norm += p.axes[k][c] * p.axes[k][c];
      }
      EXPECT_NEAR(norm, 1.0, 1e-12);
      EXPECT_NEAR(std::abs(dot), 1.0, 1e-8);
      // Sign convention: largest-magnitude loading is positive.
      const auto peak = std::max_element(p.axes[k].begin(), p.axes[k].end(),
                                         [](double a, double b) { return std::abs(a) < std::abs(b); });
      EXPECT_GT(*peak, 0.0);
    }
  }
}

TEST(Pca, VariancesInvariantUnderCellPermutation) {
  std::mt19937_64 rng(3);
  const Tensor f = testing::random_tensor({5, 4, 4}, rng);
  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor g(f.shape());
  for (int c = 0; c < 5; ++c) {
    for (std::size_t i = 0; i < 16; ++i) g.channel(c)[i] = f.channel(c)[perm[i]];
  }
  const auto a = feature_pca(f).explained_variance, b = feature_pca(g).explained_variance;
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-9);
}

TEST(PcaVisualize, RankOneUsesOnlyRed) {
  const std::vector<double> dir{0.5, -1.0, 2.0, 0.25};
  Tensor f({4, 3, 3});
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      for (int c = 0; c < 4; ++c) f.at(c, y, x) = (y * 3 + x - 4) * dir[c];
    }
  }
  const RgbImage img = pca_visualize({f});
  double lo = 1.0, hi = 0.0;
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      lo = std::min(lo, img.at(y, x, 0));
      hi = std::max(hi, img.at(y, x, 0));
      EXPECT_EQ(img.at(y, x, 1), 0.5);
      EXPECT_EQ(img.at(y, x, 2), 0.5);
    }
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(PcaVisualize, TwoClustersSplitRed) {
  std::mt19937_64 rng(4);
  const Tensor u = testing::random_tensor({5, 1, 1}, rng), w = testing::random_tensor({5, 1, 1}, rng);
  Tensor f({5, 4, 4});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const Tensor& src = x < 2 ? u : w;
      for (int c = 0; c < 5; ++c) f.at(c, y, x) = src.at(c, 0, 0);
    }
  }
  const RgbImage img = pca_visualize({f});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const double r = img.at(y, x, 0);
      EXPECT_TRUE(std::abs(r) < 1e-12 || std::abs(r - 1.0) < 1e-12) << r;
      EXPECT_NE(r, img.at(y, x < 2 ? 3 : 0, 0));
    }
  }
}

TEST(PcaVisualize, ConstantMapIsMidGrey) {
  const RgbImage img = pca_visualize({Tensor({3, 2, 2}, 1.25)});
  for (double v : img.rgb) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(pca_visualize({Tensor({2, 2, 2}, 1.0)}), InvalidArgument);
}

TEST(PcaVisualize, DeterministicAndInRange) {
  std::mt19937_64 rng(5);
  const Tensor f = testing::random_tensor({8, 6, 6}, rng);
  const RgbImage a = pca_visualize({f}), b = pca_visualize({f});
  EXPECT_EQ(a.rgb, b.rgb);
  ASSERT_EQ(a.rgb.size(), 6u * 6u * 3u);
  for (double v : a.rgb) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

// ---------------------------------------------------------------- Acc15 reports

struct EvalWorld {
  std::vector<Shape3> spec{{6, 8, 8}, {8, 4, 4}};
  AggregatorModel model;
  TemplateGallery gallery;
  std::vector<EvalSample> samples;
};

EvalWorld eval_world(int classes_in_gallery = 3) {
  AggregatorConfig cfg;
  cfg.layer_spec = {{6, 8, 8}, {8, 4, 4}};
  cfg.channels = 8;
  cfg.resolution = 4;
  cfg.seed = 1;
  EvalWorld w{cfg.layer_spec, AggregatorModel(cfg), {}, {}};
  const auto views = sample_viewsphere(16, true, 1);
  std::vector<TemplateSource> src;
  int id = 0;
  for (int c = 0; c < classes_in_gallery; ++c) {
    for (const auto& r : views.rotations) {
      src.push_back({id++, {c, "c" + std::to_string(c)}, {r, {}}, Mask::full(4),
                     synthetic_extract(c, r, w.spec, 0.0, 0), ""});
    }
  }
  w.gallery = build_gallery(src, w.model);
  std::mt19937_64 rng(6);
  for (int c = 0; c < 3; ++c) {
    for (int q = 0; q < 8; ++q) {
      const Rotation3 r = compose(random_rotation(rng()), views.rotations[rng() % views.rotations.size()]);
      const Rotation3 near = q % 2 ? r : compose(from_axis_angle(Eigen::Vector3d(1, 0, 0), 0.05),
                                                 views.rotations[q % views.rotations.size()]);
      w.samples.push_back({{synthetic_extract(c, near, w.spec, 0.1, rng()), {c, "c" + std::to_string(c)}, {near, {}}},
                           c == 2 ? "B" : "A",
                           c != 1});
    }
  }
  return w;
}

TEST(EvaluateAcc, MatchesRescoringOracle) {
  const EvalWorld w = eval_world();
  const EvalReport rep = evaluate_acc(w.samples, w.gallery, w.model);
  ASSERT_EQ(rep.outcomes.size(), w.samples.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const auto& s = w.samples[i].sample;
    const auto o = testing::oracle_retrieve(w.model.aggregate(s.query_stack).map, w.gallery, kDefaultDelta);
    EXPECT_EQ(rep.outcomes[i].template_id, o.id);
    EXPECT_EQ(rep.outcomes[i].score, o.score);
    const Template& t = w.gallery.by_id(o.id);
    const bool ok = t.cls.id == s.gt_class.id &&
                    geodesic_distance(t.pose.rotation, s.gt_pose.rotation) < 15.0 / 180.0;
    EXPECT_EQ(rep.outcomes[i].correct, ok ? 1 : 0);
    correct += ok;
  }
  const EvalRow& overall = rep.row("overall");
  EXPECT_EQ(overall.n_samples, w.samples.size());
  EXPECT_EQ(overall.n_correct, correct);
  EXPECT_DOUBLE_EQ(overall.accuracy, static_cast<double>(correct) / w.samples.size());
  EXPECT_EQ(rep.model_fingerprint, w.model.fingerprint());
}

TEST(EvaluateAcc, RowsFollowFirstAppearance) {
  const EvalWorld w = eval_world();
  const EvalReport rep = evaluate_acc(w.samples, w.gallery, w.model);
  std::vector<std::pair<std::string, std::string>> names;
  for (const auto& r : rep.rows) names.emplace_back(r.split_name, r.membership);
  const std::vector<std::pair<std::string, std::string>> expected{
      {"A", "seen"}, {"A", "unseen"}, {"B", "seen"}, {"seen", "seen"}, {"unseen", "unseen"}, {"overall", "all"}};
  EXPECT_EQ(names, expected);
  EXPECT_EQ(rep.row("seen").n_samples, 16u);
  EXPECT_EQ(rep.row("unseen").n_samples, 8u);
  EXPECT_EQ(rep.row("seen").n_correct + rep.row("unseen").n_correct, rep.row("overall").n_correct);
  EXPECT_THROW(rep.row("nope"), InvalidArgument);
}

TEST(EvaluateAcc, ExactTemplateQueryIsCorrect) {
  const EvalWorld w = eval_world();
  const Template& t = w.gallery.templates[5];
  EvalSample s{{synthetic_extract(t.cls.id, t.pose.rotation, w.spec, 0.0, 0), t.cls, t.pose}, "A", true};
  const EvalReport rep = evaluate_acc({s}, w.gallery, w.model);
  EXPECT_EQ(rep.row("overall").accuracy, 1.0);
  EXPECT_EQ(rep.outcomes[0].template_id, t.id);
  EXPECT_FALSE(std::any_of(rep.rows.begin(), rep.rows.end(), [](const EvalRow& r) { return r.split_name == "unseen"; }));
}

TEST(EvaluateAcc, ClassAbsentFromGalleryScoresZero) {
  const EvalWorld w = eval_world(2);
  std::vector<EvalSample> only_missing;
  for (const auto& s : w.samples) {
    if (s.sample.gt_class.id == 2) only_missing.push_back(s);
  }
  ASSERT_FALSE(only_missing.empty());
  EXPECT_EQ(evaluate_acc(only_missing, w.gallery, w.model).row("overall").n_correct, 0u);
}

TEST(EvaluateAcc, Errors) {
  EvalWorld w = eval_world();
  EXPECT_THROW(evaluate_acc({}, w.gallery, w.model), InvalidArgument);
  TemplateGallery stale = w.gallery;
  stale.model_fingerprint ^= 1u;
  EXPECT_THROW(evaluate_acc(w.samples, stale, w.model), FingerprintMismatch);
  auto bad = w.samples;
  bad[0].sample.query_stack.layers.pop_back();
  EXPECT_THROW(evaluate_acc(bad, w.gallery, w.model), ShapeMismatch);
}

TEST(Report, TextAndCsvLayout) {
  EvalReport rep;
  rep.model_fingerprint = 0xabc;
  rep.config = {{"delta", 0.2}};
  rep.rows = {{"A", "seen", 4, 3, 0.75}, {"B", "unseen", 2, 1, 0.5}, {"seen", "seen", 4, 3, 0.75},
              {"unseen", "unseen", 2, 1, 0.5}, {"overall", "all", 6, 4, 4.0 / 6.0}};
  const std::string text = report_text(rep);
  EXPECT_EQ(text.rfind("report: posefuse-eval\nversion: 1\n", 0), 0u);
  EXPECT_NE(text.find("config: {\"delta\":0.2}\n"), std::string::npos);
  EXPECT_NE(text.find("row: split=overall membership=all n=6 correct=4 accuracy=0.666667\n"), std::string::npos);
  EXPECT_EQ(report_csv(rep), "split,seen,unseen\nA,0.750000,-\nB,-,0.500000\noverall,0.750000,0.500000\n");
}

TEST(Report, DeterministicAcrossCalls) {
  const EvalWorld w = eval_world();
  EXPECT_EQ(report_text(evaluate_acc(w.samples, w.gallery, w.model)),
            report_text(evaluate_acc(w.samples, w.gallery, w.model)));
}

}  // namespace
}  // namespace posefuse
