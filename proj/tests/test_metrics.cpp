#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "s2s2/metrics.hpp"

using namespace s2s2;

TEST(Metrics, AgreeWithPixelCountingOracle) {
  Rng rng(1, Stream::verify);
  for (int t = 0; t < 100; ++t) {
    const auto p = oracle::random_mask(rng, 8, 8, 4), g = oracle::random_mask(rng, 8, 8, 4);
    for (int c = 0; c < 4; ++c) {
      const auto k = oracle::count(p, g, c);
      const ClassScores s = class_metrics(p, g, c);
      if (2 * k.tp + k.fp + k.fn > 0) EXPECT_NEAR(*s.dice, 2 * k.tp / (2 * k.tp + k.fp + k.fn), 1e-9);
      if (k.tp + k.fp + k.fn > 0) EXPECT_NEAR(*s.iou, k.tp / (k.tp + k.fp + k.fn), 1e-9);
      if (k.tp + k.fp > 0) EXPECT_NEAR(*s.precision, k.tp / (k.tp + k.fp), 1e-9);
      if (k.tp + k.fn > 0) EXPECT_NEAR(*s.recall, k.tp / (k.tp + k.fn), 1e-9);
    }
  }
}

TEST(Metrics, DiceIouIdentity) {
  Rng rng(2, Stream::verify);
  for (int t = 0; t < 100; ++t) {
    const auto p = oracle::random_mask(rng, 8, 8, 3), g = oracle::random_mask(rng, 8, 8, 3);
    for (int c = 0; c < 3; ++c) {
      const ClassScores s = class_metrics(p, g, c);
      if (s.dice && s.iou) EXPECT_NEAR(*s.dice, 2 * *s.iou / (1 + *s.iou), 1e-9);
    }
  }
}

TEST(Metrics, SwapExchangesPrecisionAndRecall) {
  Rng rng(3, Stream::verify);
  for (int t = 0; t < 50; ++t) {
    const auto p = oracle::random_mask(rng, 8, 8, 3), g = oracle::random_mask(rng, 8, 8, 3);
    for (int c = 0; c < 3; ++c) {
      const ClassScores a = class_metrics(p, g, c), b = class_metrics(g, p, c);
      EXPECT_EQ(a.dice, b.dice);
      EXPECT_EQ(a.iou, b.iou);
      EXPECT_EQ(a.precision, b.recall);
      EXPECT_EQ(a.recall, b.precision);
      EXPECT_EQ(hausdorff(p, g, c), hausdorff(g, p, c));
    }
  }
}

TEST(Metrics, AbsentClassIsUndefinedNotPerfect) {
  const SegmentationMask a(4, 4, 3, 0), b(4, 4, 3, 0);
  const ClassScores s = class_metrics(a, b, 2);
  EXPECT_FALSE(s.dice);
  EXPECT_FALSE(s.iou);
  EXPECT_FALSE(s.precision);
  EXPECT_FALSE(s.recall);
  EXPECT_FALSE(hausdorff(a, b, 2));
}

TEST(Metrics, PerfectAndDisjoint) {
  SegmentationMask g(4, 4, 2);
  g.labels[5] = g.labels[6] = 1;
  const ClassScores perfect = class_metrics(g, g, 1);
  EXPECT_EQ(*perfect.dice, 1.0);
  EXPECT_EQ(*hausdorff(g, g, 1), 0.0);
  SegmentationMask p(4, 4, 2);
  p.labels[15] = 1;
  EXPECT_EQ(*class_metrics(p, g, 1).dice, 0.0);
}

TEST(Hausdorff, MatchesAllPairsBruteForce) {
  Rng rng(4, Stream::verify);
  for (int t = 0; t < 100; ++t) {
    const std::size_t H = 16 + rng.below(49), W = 16 + rng.below(49);
    SegmentationMask a(H, W, 2), b(H, W, 2);
    const auto na = 1 + rng.below(200), nb = 1 + rng.below(200);
    for (std::uint64_t i = 0; i < na; ++i) a.labels[rng.below(H * W)] = 1;
    for (std::uint64_t i = 0; i < nb; ++i) b.labels[rng.below(H * W)] = 1;
    std::vector<oracle::Point> pa, pb;
    for (std::size_t i = 0; i < H * W; ++i) {
      if (a.labels[i]) pa.emplace_back(static_cast<int>(i / W), static_cast<int>(i % W));
      if (b.labels[i]) pb.emplace_back(static_cast<int>(i / W), static_cast<int>(i % W));
    }
    EXPECT_EQ(*hausdorff(a, b, 1), oracle::hausdorff(pa, pb)) << "instance " << t;
  }
}

TEST(Hausdorff, DistanceTransformMatchesBruteForce) {
  Rng rng(5, Stream::verify);
  const std::size_t H = 13, W = 9;
  std::vector<bool> inside(H * W);
  for (int k = 0; k < 6; ++k) inside[rng.below(H * W)] = true;
  const auto d = squared_distance_transform(inside, H, W);
  for (std::size_t i = 0; i < H * W; ++i) {
    double best = INFINITY;
    for (std::size_t j = 0; j < H * W; ++j) {
      if (!inside[j]) continue;
      const double dy = double(i / W) - double(j / W), dx = double(i % W) - double(j % W);
      best = std::min(best, dy * dy + dx * dx);
    }
    EXPECT_EQ(d[i], best);
  }
}

TEST(Hausdorff, KnownGeometry) {
  SegmentationMask a(10, 10, 2), b(10, 10, 2);
  a.at(0, 0) = 1;
  b.at(0, 0) = 1;
  b.at(3, 4) = 1;
  EXPECT_DOUBLE_EQ(*hausdorff(a, b, 1), 5.0);
}

TEST(Summary, MeansOverForegroundAndDefinedSamples) {
  // Sample 1: class 1 perfect, class 2 absent from both.
  // Sample 2: class 1 half right, class 2 perfect.
  SegmentationMask g1(1, 4, 3), p1(1, 4, 3), g2(1, 4, 3), p2(1, 4, 3);
  g1.labels = {1, 1, 0, 0};
  p1.labels = {1, 1, 0, 0};
  g2.labels = {1, 1, 2, 0};
  p2.labels = {1, 0, 2, 0};
  const std::vector<SegmentationMask> preds{p1, p2}, gts{g1, g2};
  const MetricsRecord r = summarize(preds, gts);
  EXPECT_EQ(r.num_samples, 2u);
  EXPECT_EQ(r.per_class.size(), 2u);
  EXPECT_NEAR(r.per_class.at(1).dice, (1.0 + 2.0 / 3.0) / 2, 1e-12);
  EXPECT_EQ(r.per_class.at(2).n_dice, 1u);
  EXPECT_NEAR(r.per_class.at(2).dice, 1.0, 1e-12);
  EXPECT_NEAR(r.mean_dice, ((1.0 + 2.0 / 3.0) / 2 + 1.0) / 2, 1e-12);
}

TEST(Summary, PermutationInvariant) {
  Rng rng(6, Stream::verify);
  std::vector<SegmentationMask> p, g;
  for (int i = 0; i < 12; ++i) {
    p.push_back(oracle::random_mask(rng, 8, 8, 4));
    g.push_back(oracle::random_mask(rng, 8, 8, 4));
  }
  const MetricsRecord a = summarize(p, g);
  std::reverse(p.begin(), p.end());
  std::reverse(g.begin(), g.end());
  const MetricsRecord b = summarize(p, g);
  EXPECT_NEAR(a.mean_dice, b.mean_dice, 1e-12);
  EXPECT_NEAR(a.mean_iou, b.mean_iou, 1e-12);
  EXPECT_NEAR(*a.mean_hausdorff, *b.mean_hausdorff, 1e-12);
}

TEST(Summary, ConstantBackgroundPredictorScoresZero) {
  Rng rng(7, Stream::verify);
  std::vector<SegmentationMask> p, g;
  for (int i = 0; i < 5; ++i) {
    g.push_back(oracle::random_mask(rng, 8, 8, 4));
    p.emplace_back(8, 8, 4, 0);
  }
  EXPECT_EQ(summarize(p, g).mean_dice, 0.0);
}

TEST(Summary, RejectsMismatch) {
  const std::vector<SegmentationMask> one{SegmentationMask(2, 2, 2)}, none;
  EXPECT_THROW(summarize(one, none), std::invalid_argument);
  EXPECT_THROW(summarize(none, none), std::invalid_argument);
  const std::vector<SegmentationMask> other{SegmentationMask(2, 3, 2)};
  EXPECT_THROW(summarize(one, other), std::invalid_argument);
}
