#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "orefeed/patch_store.hpp"
#include "orefeed/synthgen.hpp"
#include "orefeed/weak_relabel.hpp"
#include "support.hpp"

using namespace orefeed;
using namespace orefeed::relabel;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Points around `k` centers spaced `spacing` apart on a diagonal line.
Eigen::MatrixXd planted(int k, int per, double sigma, double spacing, std::uint64_t seed,
                        std::vector<int>& truth) {
  Rng rng(seed);
  Eigen::MatrixXd x(k * per, 2);
  truth.clear();
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < per; ++i) {
      x(c * per + i, 0) = c * spacing + rng.normal(0, sigma);
      x(c * per + i, 1) = (c % 2) * spacing + rng.normal(0, sigma);
      truth.push_back(c);
    }
  }
  return x;
}

}  // namespace

TEST(Pca, PlaneNeedsTwoComponents) {
  Rng rng(1);
  Eigen::MatrixXd x(40, 3);
  for (int i = 0; i < 40; ++i) {
    const double a = rng.normal(), b = rng.normal();
    x.row(i) << a + b, 2 * a - b, 3 * b;
  }
  const auto m = fit_pca(x, 0.95);
  const auto full = fit_pca(x, 1.0);
  EXPECT_LE(m.n_components(), 2);
  EXPECT_EQ(full.n_components(), 2);
  EXPECT_NEAR(full.explained_variance_ratio.sum(), 1.0, 1e-9);
}

TEST(Pca, MatchesSvdOracle) {
  const auto x = random_matrix(50, 10, 2);
  const auto m = fit_pca(x, 0.95);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd var = svd.singularValues().array().square();
  const Eigen::VectorXd ratio = var / var.sum();
  int keep = 0;
  double cum = 0.0;
  while (cum < 0.95) cum += ratio[keep++];
  ASSERT_EQ(m.n_components(), keep);
  for (int c = 0; c < keep; ++c) EXPECT_NEAR(m.explained_variance_ratio[c], ratio[c], 1e-9);
  for (int i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd xi = x.row(i).transpose();
    const Eigen::VectorXd z = m.transform(xi);
    const Eigen::VectorXd zo = svd.matrixV().leftCols(keep).transpose() * (xi - mean.transpose());
    // Component signs are arbitrary, so compare magnitudes per component.
    for (int c = 0; c < keep; ++c) EXPECT_NEAR(std::abs(z[c]), std::abs(zo[c]), 1e-6);
    const double err = (m.inverse_transform(z) - xi).norm();
    const Eigen::VectorXd back = mean.transpose() + svd.matrixV().leftCols(keep) * zo;
    EXPECT_NEAR(err, (back - xi).norm(), 1e-6);
  }
}

TEST(Pca, Invariants) {
  const auto x = random_matrix(80, 12, 3);
  const auto m = fit_pca(x, 0.95);
  const Eigen::MatrixXd gram = m.components * m.components.transpose();
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(m.transform(m.mean).norm(), 1e-12);
  EXPECT_GE(m.explained_variance_ratio.sum(), 0.95);
  EXPECT_LE(m.explained_variance_ratio.sum(), 1.0 + 1e-12);
  for (Eigen::Index c = 1; c < m.explained_variance_ratio.size(); ++c) {
    EXPECT_LE(m.explained_variance_ratio[c], m.explained_variance_ratio[c - 1]);
    EXPECT_GT(m.explained_variance_ratio[c], 0.0);
  }
  const Eigen::MatrixXd rows = m.transform(x);
  EXPECT_LT((rows.row(4).transpose() - m.transform(Eigen::VectorXd(x.row(4).transpose()))).norm(), 1e-12);
}

TEST(Pca, DegenerateAndErrors) {
  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(5, 4, 2.0);
  const auto m = fit_pca(same);
  EXPECT_TRUE(m.degenerate);
  EXPECT_EQ(m.n_components(), 1);
  EXPECT_DOUBLE_EQ(m.explained_variance_ratio[0], 1.0);
  EXPECT_THROW(fit_pca(Eigen::MatrixXd::Zero(1, 3)), PreconditionError);
  Eigen::MatrixXd bad = random_matrix(4, 2, 1);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(fit_pca(bad), PreconditionError);
}

TEST(KMeans, SingleClusterIsMean) {
  const auto x = random_matrix(30, 3, 4);
  const auto r = kmeans(x, 1, 1);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  EXPECT_LT((r.centroids.row(0) - mean).norm(), 1e-12);
  EXPECT_NEAR(r.inertia, (x.rowwise() - mean).squaredNorm(), 1e-9);
}

TEST(KMeans, RecoversPlantedGaussians) {
  std::vector<int> truth;
  const auto x = planted(3, 40, 0.05, 10.0, 5, truth);
  const auto r = kmeans(x, 3, 2);
  EXPECT_NEAR(synth::adjusted_rand_index(r.assignments, truth), 1.0, 1e-12);
}

TEST(KMeans, PostConditions) {
  const auto x = random_matrix(60, 4, 6);
  for (const int k : {2, 5, 9}) {
    const auto r = kmeans(x, k, 3);
    for (std::size_t h = 1; h < r.inertia_history.size(); ++h) {
      EXPECT_LE(r.inertia_history[h], r.inertia_history[h - 1] + 1e-12);
    }
    EXPECT_NEAR(inertia_of(x, r.centroids, r.assignments), r.inertia, 1e-9);
    for (int i = 0; i < x.rows(); ++i) {
      const double own = (x.row(i) - r.centroids.row(r.assignments[i])).squaredNorm();
      for (int c = 0; c < k; ++c) EXPECT_LE(own, (x.row(i) - r.centroids.row(c)).squaredNorm() + 1e-12);
    }
  }
  EXPECT_NEAR(kmeans(x, 60, 1).inertia, 0.0, 1e-20);
  EXPECT_THROW(kmeans(x, 61, 1), PreconditionError);
  EXPECT_EQ(kmeans(x, 4, 7).assignments, kmeans(x, 4, 7).assignments);
}

TEST(KMeans, SmallNMatchesExhaustiveSearch) {
  std::vector<int> truth;
  const auto x = planted(3, 4, 0.3, 3.0, 7, truth);
  const int n = 12, k = 3;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> a(n, 0);
  for (long code = 0; code < 531441; ++code) {  // 3^12
    long c = code;
    for (int i = 0; i < n; ++i, c /= 3) a[i] = static_cast<int>(c % 3);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, 2);
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < n; ++i) sum.row(a[i]) += x.row(i), cnt[a[i]] += 1;
    if ((cnt.array() == 0).any()) continue;
    double in = 0.0;
    for (int i = 0; i < n; ++i) in += (x.row(i) - sum.row(a[i]) / cnt[a[i]]).squaredNorm();
    best = std::min(best, in);
  }
  const auto r = kmeans(x, k, 1);
  EXPECT_NEAR(r.inertia, best, 1e-9);
}

TEST(Elbow, PlantedKneeAndLinear) {
  ElbowCurve c;
  for (int k = 10; k <= 31; ++k) {
    c.ks.push_back(k);
    c.inertias.push_back(k <= 18 ? 1000.0 - 100.0 * (k - 10) : 200.0 - 5.0 * (k - 18));
  }
  const auto choice = elbow_select(c);
  EXPECT_EQ(choice.k, 18);
  EXPECT_FALSE(choice.no_knee);

  ElbowCurve lin;
  for (int k = 10; k <= 31; ++k) lin.ks.push_back(k), lin.inertias.push_back(500.0 - 7.0 * k);
  const auto l = elbow_select(lin);
  EXPECT_TRUE(l.no_knee);
  EXPECT_EQ(l.k, 10);

  EXPECT_THROW(elbow_select({{1, 2}, {3.0, 2.0}}), PreconditionError);
  EXPECT_THROW(elbow_select({{1, 3, 2}, {3.0, 2.0, 1.0}}), PreconditionError);
}

TEST(Relabel, ClusterModeRules) {
  auto vocab = ingest::ClassVocab::from_setpoints({120, 125, 130});
  // Cluster 0: {A:9, B:1}; cluster 1: {A:3, B:3, C:4}.
  std::vector<int> assign;
  std::vector<ClassId> labels;
  for (int i = 0; i < 9; ++i) assign.push_back(0), labels.push_back(0);
  assign.push_back(0), labels.push_back(1);
  for (const auto [lab, n] : {std::pair{0, 3}, {1, 3}, {2, 4}}) {
    for (int i = 0; i < n; ++i) assign.push_back(1), labels.push_back(lab);
  }
  const auto r = relabel::relabel(assign, labels, vocab, RelabelMode::ClusterMode, 0.5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(r.labels[i], 0);
  ASSERT_EQ(r.minted.size(), 1u);
  EXPECT_EQ(r.minted[0], 3);
  for (int i = 10; i < 20; ++i) EXPECT_EQ(r.labels[i], 3);
  EXPECT_EQ(vocab.size(), 4u);
  EXPECT_DOUBLE_EQ(r.change_fraction, 11.0 / 20.0);

  auto v2 = ingest::ClassVocab::from_setpoints({120, 125, 130});
  const auto none = relabel::relabel(assign, labels, v2, RelabelMode::ClusterMode, 0.0);
  EXPECT_TRUE(none.minted.empty());
  EXPECT_EQ(v2.size(), 3u);
}

TEST(Relabel, ClusterIdMintsOnePerCluster) {
  auto vocab = ingest::ClassVocab::from_setpoints({120, 125});
  const std::vector<int> assign{0, 0, 1, 1, 2, 2};
  const std::vector<ClassId> labels{0, 0, 1, 1, 1, 0};
  const auto r = relabel::relabel(assign, labels, vocab, RelabelMode::ClusterId);
  EXPECT_EQ(r.minted.size(), 3u);
  EXPECT_EQ(vocab.cluster_classes().size(), 3u);
  EXPECT_EQ(r.labels[0], r.labels[1]);
  EXPECT_NE(r.labels[0], r.labels[2]);
  // Only cluster 2 disagrees with its modal label (tie resolved to the lower label 0).
  EXPECT_DOUBLE_EQ(r.change_fraction, 1.0 / 6.0);
}

TEST(Relabel, AlignedAssignmentsChangeNothing) {
  auto vocab = ingest::ClassVocab::from_setpoints({120, 125, 130});
  const std::vector<int> assign{2, 2, 0, 0, 1};
  const std::vector<ClassId> labels{1, 1, 0, 0, 2};
  EXPECT_EQ(relabel::relabel(assign, labels, vocab, RelabelMode::ClusterMode).change_fraction, 0.0);
  EXPECT_EQ(relabel::relabel(assign, labels, vocab, RelabelMode::ClusterId).change_fraction, 0.0);
  EXPECT_THROW(relabel::relabel(std::vector<int>{0}, labels, vocab, RelabelMode::ClusterId), PreconditionError);
}

TEST(Relabel, ModeStrings) {
  EXPECT_EQ(relabel_mode_from_string("cluster_id"), RelabelMode::ClusterId);
  EXPECT_EQ(relabel_mode_from_string("cluster_mode"), RelabelMode::ClusterMode);
  EXPECT_EQ(to_string(RelabelMode::ClusterMode), "cluster_mode");
  EXPECT_THROW(relabel_mode_from_string("vote"), ConfigError);
  const std::vector<ClassId> a{1, 2, 3, 4}, b{1, 0, 3, 0};
  EXPECT_DOUBLE_EQ(change_fraction(a, b), 0.5);
}

namespace {

// Bags of desk frames whose latent equals the bag's class; no instance noise.
struct TinyData {
  PatchStore store{imaging::SegmentGeometry::desk()};
  std::vector<ingest::Bag> train, val;
  ingest::ClassVocab vocab = ingest::ClassVocab::from_setpoints({0, 125, 140});
  std::vector<int> latent_of;  // by image id
};

TinyData tiny_data(int bags, int per_bag) {
  TinyData d;
  synth::SynthScenario sc;
  const int latents[] = {0, 2, 5};
  std::size_t id = 0;
  for (int b = 0; b < bags; ++b) {
    ingest::Bag bag;
    bag.bag_id = static_cast<std::size_t>(b);
    bag.label = b % 3;
    bag.setpoint = d.vocab.setpoint_of(bag.label);
    for (int i = 0; i < per_bag; ++i, ++id) {
      d.store.add(id, synth::gen_image(latents[bag.label], sc, derive_seed(77, id)));
      d.latent_of.push_back(bag.label);
      bag.instance_ids.push_back(id);
    }
    (b < bags * 3 / 4 ? d.train : d.val).push_back(bag);
  }
  return d;
}

StageOneConfig tiny_stage_one() {
  StageOneConfig cfg;
  cfg.net = testing_support::tiny_patch_config(3, 2, 3, 32);
  cfg.train.max_epochs = 4;
  cfg.train.batch_size = 8;
  cfg.train.lr_init = 0.05;
  cfg.train.lr_min = 1e-4;
  cfg.k_min = 2;
  cfg.k_max = 6;
  cfg.max_iterations = 3;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(StageOne, ZeroNoiseConvergesWithConsistentReport) {
  auto d = tiny_data(24, 4);
  const auto cfg = tiny_stage_one();
  const auto r = stage_one(d.store, d.train, d.val, d.vocab, cfg);
  const auto& its = r.report.iterations;
  ASSERT_FALSE(its.empty());
  EXPECT_LE(its.size(), 3u);
  EXPECT_TRUE(r.report.converged);
  EXPECT_LT(its.back().change_fraction, cfg.epsilon);
  EXPECT_GE(its.back().val_accuracy, 0.9);
  EXPECT_EQ(its.front().relabel_source, "clusters");
  for (std::size_t i = 1; i < its.size(); ++i) EXPECT_EQ(its[i].relabel_source, "predictions");
  EXPECT_EQ(r.instance_ids.size(), 96u);
  EXPECT_EQ(r.audit.size(), 96u * its.size());
  EXPECT_EQ(static_cast<int>(r.head_classes.size()), r.tau.config().num_classes);
  std::set<ClassId> heads(r.head_classes.begin(), r.head_classes.end());
  for (const ClassId c : r.labels) {
    EXPECT_TRUE(d.vocab.contains(c));
    EXPECT_EQ(heads.count(c), 1u);
  }
  // One training pass per iteration plus the refit, when there is one.
  EXPECT_EQ(r.histories.size(), its.size() + (r.report.final_refit ? 1 : 0));
  const auto j = to_json(r.report, d.vocab);
  EXPECT_EQ(j.at("iterations").size(), its.size());
  for (const auto& it : j.at("iterations")) {
    const double cf = it.at("label_change_fraction").get<double>();
    EXPECT_TRUE(cf >= 0.0 && cf <= 1.0);
  }
}

TEST(StageOne, RejectsEmptySplitsAndBadConfig) {
  auto d = tiny_data(6, 2);
  auto cfg = tiny_stage_one();
  EXPECT_THROW(stage_one(d.store, d.train, {}, d.vocab, cfg), PreconditionError);
  cfg.k_max = cfg.k_min + 1;
  EXPECT_THROW(stage_one(d.store, d.train, d.val, d.vocab, cfg), ConfigError);
}

TEST(StageTwo, SeparableBagsAndPredictions) {
  auto d = tiny_data(36, 3);
  const patchnet::PatchNet tau(testing_support::tiny_patch_config(3, 2, 3, 32), 3);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < d.latent_of.size(); ++i) ids.push_back(i);
  const FeatureCache cache(tau, d.store, ids);
  EXPECT_EQ(cache.channels(), 6);
  StageTwoConfig cfg;
  cfg.net.reduced_dim = 8;
  cfg.net.hidden_dim = 16;
  cfg.train.max_epochs = 60;
  cfg.train.batch_size = 4;
  cfg.train.lr_init = 0.05;
  cfg.seed = 4;
  const auto r = stage_two(cache, d.train, d.val, d.vocab, cfg);
  EXPECT_GE(r.val_accuracy, 0.9);
  EXPECT_EQ(r.omega.setpoints(), d.vocab.setpoints());
  const auto preds = predict_bags(r.omega, cache, d.val);
  ASSERT_EQ(preds.size(), d.val.size());
  EXPECT_EQ(preds, r.val_predictions);
  for (const double p : preds) EXPECT_TRUE(p == 0 || p == 125 || p == 140);
  EXPECT_THROW(stage_two(cache, {}, d.val, d.vocab, cfg), PreconditionError);
  EXPECT_THROW(cache.at(100000), PreconditionError);
}
