#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "orefeed/optimizer.hpp"
#include "orefeed/patch_net.hpp"
#include "support.hpp"

using namespace orefeed;
using namespace orefeed::patchnet;
using testing_support::random_segments;
using testing_support::tiny_patch_config;

TEST(PatchNetConfig, FusedChannels) {
  PatchNetConfig cfg;
  EXPECT_EQ(cfg.fused_channels(), 1020);
  cfg.num_classes = 1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = PatchNetConfig{};
  cfg.per_class_channels = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(PatchNet, ShapesAndSoftmax) {
  const auto cfg = tiny_patch_config(5, 3, 3, 32);
  const PatchNet net(cfg, 1);
  const auto segs = random_segments(3, 32, 2);
  const auto out = net.forward(segs);
  EXPECT_EQ(out.gfm2.rows(), 15);
  EXPECT_EQ(out.gfm2.cols(), cfg.feature_side() * cfg.feature_side());
  ASSERT_EQ(out.logits.size(), 5);
  EXPECT_NEAR(out.probs.sum(), 1.0, 1e-12);
  for (const double p : out.probs) EXPECT_TRUE(p > 0.0 && p < 1.0);
  EXPECT_EQ(net.extract_features(segs).size(), cfg.fused_channels());
}

TEST(PatchNet, WrongSegmentCountOrSizeRejected) {
  const PatchNet net(tiny_patch_config(3, 4, 2, 32), 1);
  EXPECT_THROW(net.forward(random_segments(3, 32, 1)), ShapeError);
  EXPECT_THROW(net.forward(random_segments(2, 16, 1)), ShapeError);
}

TEST(PatchNet, PermutationInvariance) {
  const auto cfg = tiny_patch_config(3, 4, 5, 32);
  const PatchNet net(cfg, 7);
  auto segs = random_segments(5, 32, 8);
  const auto base = net.forward(segs);
  const auto base_f = net.extract_features(segs);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    rng.shuffle(segs);
    const auto out = net.forward(segs);
    for (Eigen::Index c = 0; c < base.logits.size(); ++c) {
      EXPECT_NEAR(out.logits[c], base.logits[c], 1e-12 * (1 + std::abs(base.logits[c])));
    }
    EXPECT_LT((net.extract_features(segs) - base_f).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PatchNet, FeaturesArePooledGfm2) {
  const auto cfg = tiny_patch_config(4, 3, 2, 32);
  const PatchNet net(cfg, 4);
  const auto segs = random_segments(2, 32, 5);
  const auto out = net.forward(segs);
  const auto f = net.extract_features(segs);
  for (int c = 0; c < cfg.fused_channels(); ++c) {
    EXPECT_NEAR(f[c], out.gfm2.row(c).mean(), 1e-12);
  }
  // Head c reads only channel group c: its logit is a function of f[c*d, (c+1)*d).
  const auto& head_w = *net.params().find("head.w");
  const auto& head_b = *net.params().find("head.b");
  for (int c = 0; c < cfg.num_classes; ++c) {
    double z = head_b.values[c];
    for (int j = 0; j < cfg.per_class_channels; ++j) {
      z += head_w.values[c * cfg.per_class_channels + j] * f[c * cfg.per_class_channels + j];
    }
    EXPECT_NEAR(z, out.logits[c], 1e-10);
  }
}

TEST(PatchNet, ZeroInputIsDeterministic) {
  const PatchNet net(tiny_patch_config(), 3);
  auto segs = random_segments(2, 32, 1);
  for (auto& s : segs) std::fill(s.pixels.px.begin(), s.pixels.px.end(), 0.0);
  EXPECT_EQ(net.extract_features(segs), net.extract_features(segs));
}

TEST(PatchNet, SharedEncoderTreatsEqualSegmentsEqually) {
  const PatchNet net(tiny_patch_config(3, 4, 2, 32), 5);
  auto segs = random_segments(2, 32, 6);
  segs[1].pixels = segs[0].pixels;
  EXPECT_EQ(net.encode(segs[0].pixels), net.encode(segs[1].pixels));
}

TEST(PatchNet, SameSeedSameParams) {
  EXPECT_EQ(PatchNet(tiny_patch_config(), 9).params(), PatchNet(tiny_patch_config(), 9).params());
  EXPECT_FALSE(PatchNet(tiny_patch_config(), 9).params() == PatchNet(tiny_patch_config(), 10).params());
}

TEST(PatchNet, BiasesStartAtZero) {
  const PatchNet net(tiny_patch_config(), 2);
  for (const auto& t : net.params()) {
    if (t.shape.size() == 1) {
      for (const double v : t.values) EXPECT_EQ(v, 0.0) << t.name;
    }
  }
}

TEST(Loss, CrossEntropyValues) {
  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(4);
  one_hot[2] = 1.0;
  EXPECT_DOUBLE_EQ(loss(one_hot, 2), 0.0);
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(17, 1.0 / 17);
  EXPECT_NEAR(loss(uniform, 5), std::log(17.0), 1e-12);
  EXPECT_NEAR(loss(uniform, 5), 2.833, 1e-3);
  Eigen::VectorXd p(3);
  p << 0.2, 0.5, 0.3;
  Eigen::VectorXd q(3);
  q << 0.1, 0.7, 0.2;
  EXPECT_LT(loss(q, 1), loss(p, 1));
  EXPECT_THROW(loss(p, 3), Error);
  EXPECT_THROW(loss(p, -1), Error);
}

TEST(PatchNet, GradientMatchesFiniteDifferences) {
  const auto cfg = tiny_patch_config(3, 4, 2, 32);
  PatchNet net(cfg, 21);
  testing_support::PatchTrainable model(net, {{random_segments(2, 32, 22), 1}});
  const auto r = optim::grad_check(model, 0, 1e-5, 400, 1);
  EXPECT_LT(r.max_rel_error, 1e-3) << "worst tensor " << r.worst_tensor;
  EXPECT_GT(r.checked, 100u);
}

TEST(PatchNet, SumAggregationGradient) {
  auto cfg = tiny_patch_config(3, 2, 3, 16);
  cfg.encoder = {1, 2, 3, 4};
  cfg.aggregation = Aggregation::Sum;
  PatchNet net(cfg, 5);
  testing_support::PatchTrainable model(net, {{random_segments(3, 16, 6), 2}});
  EXPECT_LT(optim::grad_check(model, 0, 1e-5, 300, 2).max_rel_error, 1e-3);
}

TEST(Saliency, MatchesFiniteDifferencesOfLogit) {
  const auto cfg = tiny_patch_config(3, 4, 2, 32);
  const PatchNet net(cfg, 31);
  const auto segs = random_segments(2, 32, 32);
  const int cls = 2;
  const auto grad = net.input_gradient(segs, cls);
  const auto sal = net.saliency(segs, cls);
  ASSERT_EQ(sal.size(), 2u);
  Rng rng(33);
  const double eps = 1e-6;
  int checked = 0;
  for (int n = 0; n < 20; ++n) {
    const auto s = rng.below(2);
    const int c = static_cast<int>(rng.below(3)), y = static_cast<int>(rng.below(32)),
              x = static_cast<int>(rng.below(32));
    auto plus = segs, minus = segs;
    plus[s].pixels.at(c, y, x) += eps;
    minus[s].pixels.at(c, y, x) -= eps;
    const double fd = (net.forward(plus).logits[cls] - net.forward(minus).logits[cls]) / (2 * eps);
    const double a = grad[s].at(c, y, x);
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
    EXPECT_LT(rel, 1e-3) << "pixel " << s << "," << c << "," << y << "," << x;
    EXPECT_DOUBLE_EQ(sal[s].at(c, y, x), std::abs(a));
    ++checked;
  }
  EXPECT_EQ(checked, 20);
  for (const auto& m : sal) {
    for (const double v : m.px) ASSERT_GE(v, 0.0);
  }
}

TEST(Saliency, ZeroHeadWeightsGiveZeroSaliency) {
  const auto cfg = tiny_patch_config(3, 4, 2, 32);
  PatchNet net(cfg, 41);
  auto& head_w = net.params()[net.params().index_of("head.w")];
  // Only head 0 keeps its weights; the logit of class 1 becomes constant.
  for (std::size_t i = cfg.per_class_channels; i < head_w.values.size(); ++i) head_w.values[i] = 0.0;
  const auto segs = random_segments(2, 32, 42);
  for (const auto& m : net.saliency(segs, 1)) {
    for (const double v : m.px) ASSERT_EQ(v, 0.0);
  }
  double total = 0.0;
  for (const auto& m : net.saliency(segs, 0)) total += std::accumulate(m.px.begin(), m.px.end(), 0.0);
  EXPECT_GT(total, 0.0);
}
