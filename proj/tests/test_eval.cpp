#include <gtest/gtest.h>

#include <numbers>

#include "ganglionet/checkpoint.hpp"
#include "ganglionet/eval.hpp"
#include "image_oracles.hpp"

using namespace ganglionet;

namespace {

// Largest bipartite matching by exhaustive augmenting paths (Kuhn), slots expanded.
std::size_t max_matching(const std::vector<Detection>& det, const std::vector<Point>& pts, double radius) {
  std::vector<std::pair<double, double>> slots;
  for (const auto& d : det)
    for (std::size_t k = 0; k < d.cells; ++k) slots.emplace_back(d.x, d.y);
  std::vector<int> owner(slots.size(), -1);
  std::function<bool(std::size_t, std::vector<bool>&)> augment = [&](std::size_t i, std::vector<bool>& seen) {
    for (std::size_t j = 0; j < slots.size(); ++j) {
      if (seen[j] || std::hypot(pts[i].x - slots[j].first, pts[i].y - slots[j].second) > radius) continue;
      seen[j] = true;
      if (owner[j] < 0 || augment(static_cast<std::size_t>(owner[j]), seen)) {
        owner[j] = static_cast<int>(i);
        return true;
      }
    }
    return false;
  };
  std::size_t n = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<bool> seen(slots.size(), false);
    n += augment(i, seen);
  }
  return n;
}

// Small architecture that trains in a fraction of a second per step.
NablaArchitecture tiny_arch() {
  auto a = NablaArchitecture::with_base_width(2, 3, 3);
  a.patch_side = 32;
  return a;
}

std::vector<PatchPair> disc_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PatchPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    PatchPair p;
    p.image = RgbImage(32, 32, {220, 220, 230});
    p.mask = BinaryMask(32, 32);
    const int cx = static_cast<int>(rng.between(8, 23)), cy = static_cast<int>(rng.between(8, 23));
    ganglionet::testing::paint_disc(p.mask, cx, cy, 6.0);
    for (std::size_t k = 0; k < p.mask.data.size(); ++k)
      if (p.mask.data[k]) {
        p.image.pixels[3 * k] = 140;
        p.image.pixels[3 * k + 1] = 80;
        p.image.pixels[3 * k + 2] = 40;
      }
    p.image_id = "disc" + std::to_string(i);
    out.push_back(std::move(p));
  }
  return out;
}

TrainConfig quick_config(std::size_t epochs, std::size_t batch) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  c.learning_rate = 1e-2;
  c.seed = 4;
  return c;
}

}  // namespace

TEST(Detection, PerfectPredictions) {
  const std::vector<Point> pts{{10, 10}, {50, 60}, {200, 30}};
  const auto c = detection_match({{10, 10, 1}, {50, 60, 1}, {200, 30, 1}}, pts);
  EXPECT_EQ(c.tp, 3u);
  EXPECT_DOUBLE_EQ(c.f1(), 1.0);
}

TEST(Detection, NoPredictions) {
  const auto c = detection_match({}, {{5, 5}});
  EXPECT_EQ(c.fn, 1u);
  EXPECT_DOUBLE_EQ(c.recall(), 0.0);
  EXPECT_DOUBLE_EQ(c.f1(), 0.0);
}

TEST(Detection, RadiusBoundary) {
  EXPECT_DOUBLE_EQ(detection_match({{25, 0, 1}}, {{0, 0}}, 20).f1(), 0.0);
  EXPECT_DOUBLE_EQ(detection_match({{20, 0, 1}}, {{0, 0}}, 20).f1(), 1.0);
  EXPECT_DOUBLE_EQ(detection_match({{12, 16, 1}}, {{0, 0}}, 20).f1(), 1.0);  // exactly 20 away
}

TEST(Detection, MultiCellRegionOffersSlots) {
  const std::vector<Point> pts{{100, 100}, {110, 100}, {100, 112}};
  const auto c = detection_match({{104, 104, 3}}, pts);
  EXPECT_EQ(c.tp, 3u);
  EXPECT_EQ(c.fp, 0u);
  const auto under = detection_match({{104, 104, 2}}, pts);
  EXPECT_EQ(under.tp, 2u);
  EXPECT_EQ(under.fn, 1u);
}

TEST(Detection, CountsInvariantUnderPermutation) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Point> pts;
    std::vector<Detection> det;
    for (int i = 0; i < 15; ++i) pts.push_back({static_cast<int>(rng.below(200)), static_cast<int>(rng.below(200))});
    for (int i = 0; i < 12; ++i) det.push_back({rng.uniform(0, 200), rng.uniform(0, 200), 1 + rng.below(2)});
    const auto a = detection_match(det, pts);
    ASSERT_EQ(a.tp + a.fn, pts.size());
    rng.shuffle(pts);
    rng.shuffle(det);
    const auto b = detection_match(det, pts);
    ASSERT_EQ(a.tp, b.tp);
    ASSERT_EQ(a.fp, b.fp);
  }
}

TEST(Detection, GreedyAgainstMaximumMatching) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Point> pts;
    std::vector<Detection> det;
    for (int i = 0; i < 6; ++i) pts.push_back({static_cast<int>(rng.below(80)), static_cast<int>(rng.below(80))});
    for (int i = 0; i < 4; ++i) det.push_back({rng.uniform(0, 80), rng.uniform(0, 80), 1 + rng.below(2)});
    const auto greedy = detection_match(det, pts).tp;
    const auto best = max_matching(det, pts, 20);
    ASSERT_LE(greedy, best);
    ASSERT_GE(2 * greedy, best);  // any maximal matching is within a factor 2
  }
  // Well separated detections: greedy is optimal.
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Point> pts;
    std::vector<Detection> det;
    for (int i = 0; i < 5; ++i) {
      det.push_back({100.0 * i, 0.0, 1 + rng.below(3)});
      for (std::size_t k = 0, n = rng.below(4); k < n; ++k)
        pts.push_back({100 * i + static_cast<int>(rng.below(21)) - 10, static_cast<int>(rng.below(21)) - 10});
    }
    ASSERT_EQ(detection_match(det, pts).tp, max_matching(det, pts, 20));
  }
}

TEST(CountAccuracy, PublishedRows) {
  EXPECT_NEAR(*count_accuracy({{"h3", 43, 41}}).per_image[0], 0.9535, 5e-5);
  EXPECT_DOUBLE_EQ(*count_accuracy({{"n1", 104, 104}}).per_image[0], 1.0);
  // Column sums of the published 13x13 comparison.
  EXPECT_NEAR(count_accuracy({{"all", 589, 586}}).aggregate, 0.9949, 5e-5);
}

TEST(CountAccuracy, ThreeFormulas) {
  const auto a = count_accuracy({{"a", 10, 8}, {"b", 20, 22}, {"c", 5, 5}});
  EXPECT_DOUBLE_EQ(*a.per_image[0], 0.8);
  EXPECT_DOUBLE_EQ(*a.per_image[1], 0.9);
  EXPECT_DOUBLE_EQ(a.mean, (0.8 + 0.9 + 1.0) / 3.0);
  EXPECT_DOUBLE_EQ(a.aggregate, 1.0);  // errors cancel in the sum
  const auto exact = count_accuracy({{"a", 10, 10}, {"b", 3, 3}});
  EXPECT_EQ(exact.mean, 1.0);
  EXPECT_EQ(exact.aggregate, 1.0);
}

TEST(CountAccuracy, ZeroManualExcludedWithWarning) {
  const auto a = count_accuracy({{"empty", 0, 2}, {"b", 10, 10}});
  EXPECT_FALSE(a.per_image[0].has_value());
  EXPECT_DOUBLE_EQ(a.mean, 1.0);
  EXPECT_EQ(a.predicted_total, 12u);
  EXPECT_DOUBLE_EQ(a.aggregate, 0.8);
  ASSERT_EQ(a.warnings.size(), 1u);
  EXPECT_NE(a.warnings[0].find("empty"), std::string::npos);
  EXPECT_THROW(count_accuracy({}), Error);
}

TEST(EvaluationJson, CarriesAllCandidates) {
  const auto j = evaluation_json({{"a", 10, 9}}, {{9, 0, 1}}, 20);
  EXPECT_EQ(j["images"][0]["tp"], 9);
  EXPECT_DOUBLE_EQ(j["aggregate_accuracy"].get<double>(), 0.9);
  EXPECT_DOUBLE_EQ(j["mean_accuracy"].get<double>(), 0.9);
  EXPECT_DOUBLE_EQ(j["recall"].get<double>(), 0.9);
  EXPECT_TRUE(j.contains("f1"));
}

TEST(Train, EmptyDatasetRejected) {
  const auto a = tiny_arch();
  try {
    train(build_network(a, 1), a, {}, {}, quick_config(1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
}

TEST(Train, FirstLossIsLnTwo) {
  const auto a = tiny_arch();
  const auto r = train(build_network(a, 1), a, disc_pairs(4, 1), {}, quick_config(1, 4));
  EXPECT_NEAR(r.history[0].loss, std::numbers::ln2, 1e-6);
}

TEST(Train, PartialBatchKept) {
  const auto a = tiny_arch();
  const auto r = train(build_network(a, 1), a, disc_pairs(5, 1), {}, quick_config(2, 2));
  EXPECT_EQ(r.history[0].steps, 3u);
  EXPECT_EQ(r.history[1].steps, 6u);
}

TEST(Train, SameSeedBitIdentical) {
  const auto a = tiny_arch();
  const auto pairs = disc_pairs(6, 2);
  const auto r1 = train(build_network(a, 1), a, pairs, disc_pairs(2, 9), quick_config(3, 4));
  const auto r2 = train(build_network(a, 1), a, pairs, disc_pairs(2, 9), quick_config(3, 4));
  EXPECT_EQ(serialize_checkpoint(r1.last, a), serialize_checkpoint(r2.last, a));
  EXPECT_EQ(serialize_checkpoint(r1.best, a), serialize_checkpoint(r2.best, a));
  auto other = quick_config(3, 4);
  other.seed = 5;
  const auto r3 = train(build_network(a, 1), a, pairs, {}, other);
  EXPECT_NE(serialize_checkpoint(r1.last, a), serialize_checkpoint(r3.last, a));
}

TEST(Train, OverfitsTinySetAndKeepsBest) {
  const auto a = tiny_arch();
  const auto pairs = disc_pairs(4, 3);
  const auto r = train(build_network(a, 1), a, pairs, pairs, quick_config(60, 4));
  EXPECT_GE(r.history.back().train_dice, r.history.front().train_dice);
  EXPECT_LT(r.history.back().loss, 0.5 * r.history.front().loss);
  double best = -1.0;
  for (const auto& s : r.history) best = std::max(best, *s.val_dice);
  EXPECT_EQ(r.best_score, best);
  EXPECT_DOUBLE_EQ(evaluate_dice(r.best, a, pairs, 3), best);
}

TEST(Train, EarlyStopFromCallback) {
  const auto a = tiny_arch();
  const auto r = train(build_network(a, 1), a, disc_pairs(2, 1), {}, quick_config(50, 2),
                       [](const EpochStats& s) { return s.epoch < 3; });
  EXPECT_EQ(r.history.size(), 3u);
}

TEST(Train, NonFiniteLossAborts) {
  const auto a = tiny_arch();
  auto store = build_network(a, 1);
  store.weight("head.b")[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(store, a, disc_pairs(2, 1), {}, quick_config(1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Numeric);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Train, HistoryCsv) {
  std::vector<EpochStats> h(2);
  h[0] = {1, 1, 0.5, 0.25, 0.5};
  h[1] = {2, 2, 0.4, 0.75, std::nullopt};
  EXPECT_EQ(history_csv(h), "epoch,train_dice,val_dice\n1,0.25,0.5\n2,0.75,\n");
}
