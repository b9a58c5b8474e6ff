#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganglionet/annotation.hpp"
#include "ganglionet/counting.hpp"
#include "ganglionet/nabla_net.hpp"
#include "ganglionet/ops.hpp"
#include "ganglionet/param_store.hpp"

namespace ganglionet {

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 32;
  double learning_rate = 3e-4;
  std::uint64_t seed = 0;
  std::size_t dilation_k = 13;  // kernel the training masks were built with; recorded, not used by the optimiser

  void validate() const {
    require(epochs >= 1, ErrorCode::Config, "epochs must be >= 1");
    require(batch_size >= 1, ErrorCode::Config, "batch_size must be >= 1");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::Config,
            "learning_rate must be positive and finite");
    require(dilation_k % 2 == 1, ErrorCode::Config, "dilation_k must be odd and positive");
  }
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;  // optimiser steps taken so far
  double loss = 0.0;      // mean batch loss over the epoch
  double train_dice = 0.0;
  std::optional<double> val_dice;
};

struct TrainResult {
  ParamStore best;   // best validation dice (best train dice when there is no validation set)
  ParamStore last;
  std::size_t best_epoch = 0;
  double best_score = -1.0;
  std::vector<EpochStats> history;
};

/// Called after every epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochStats&)>;

namespace detail {

inline void load_batch(const std::vector<PatchPair>& pairs, const std::vector<std::size_t>& order, std::size_t first,
                       std::size_t count, std::size_t side, Tensor& images, Tensor& masks) {
  images = Tensor(Shape{count, side, side, 3});
  masks = Tensor(Shape{count, side, side, 1});
  for (std::size_t b = 0; b < count; ++b) {
    const auto& p = pairs[order[first + b]];
    require(p.image.width == side && p.image.height == side && p.mask.width == side && p.mask.height == side,
            ErrorCode::ShapeMismatch,
            "training pair '" + p.image_id + "' is not " + std::to_string(side) + "x" + std::to_string(side));
    load_network_input(p.image, 0, 0, side, images, b);
    float* m = masks.raw() + b * side * side;
    for (std::size_t i = 0; i < side * side; ++i) m[i] = p.mask.data[i] ? 1.0f : 0.0f;
  }
}

}  // namespace detail

/// Dice of the thresholded network output against the masks, over all pairs.
inline double evaluate_dice(const ParamStore& store, const NablaArchitecture& arch, const std::vector<PatchPair>& pairs,
                            std::size_t batch_size) {
  ops::DiceCounter dice;
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Tensor images, masks;
  for (std::size_t first = 0; first < pairs.size(); first += batch_size) {
    const std::size_t n = std::min(batch_size, pairs.size() - first);
    detail::load_batch(pairs, order, first, n, arch.patch_side, images, masks);
    dice.add(network_forward(store, arch, images), masks);
  }
  return dice.value();
}

/// Adam on mean BCE. Each epoch reshuffles with a seed derived from (config.seed, epoch); the last
/// partial batch is kept. Train dice is measured on the forward passes used for the updates.
inline TrainResult train(ParamStore store, const NablaArchitecture& arch, const std::vector<PatchPair>& train_pairs,
                         const std::vector<PatchPair>& val_pairs, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  arch.validate();
  require_store_matches(store, arch);
  require(!train_pairs.empty(), ErrorCode::InvalidArgument, "train: the training set is empty");

  TrainResult result;
  std::vector<std::size_t> order(train_pairs.size());
  Tensor images, masks;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, epoch));
    rng.shuffle(order);

    ops::DiceCounter dice;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - first);
      detail::load_batch(train_pairs, order, first, n, arch.patch_side, images, masks);
      NetworkCache<float> cache;
      const auto logits = network_logits(store, arch, images, &cache);
      const auto probs = ops::sigmoid(logits);
      const double loss = ops::bce_loss(probs, masks);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite loss " << loss << " at epoch " << epoch << ", batch " << batches + 1 << ", step "
           << store.step_count() + 1 << " (learning_rate " << config.learning_rate << ", batch of " << n << ")";
        fail(ErrorCode::Numeric, os.str());
      }
      dice.add(probs, masks);
      const auto grads = network_backward(store, arch, cache, ops::bce_logit_backward(probs, masks));
      adam_step(store, grads, config.learning_rate);
      loss_sum += loss;
      ++batches;
    }

    EpochStats s;
    s.epoch = epoch;
    s.steps = store.step_count();
    s.loss = loss_sum / static_cast<double>(batches);
    s.train_dice = dice.value();
    if (!val_pairs.empty()) s.val_dice = evaluate_dice(store, arch, val_pairs, config.batch_size);
    result.history.push_back(s);

    const double score = s.val_dice.value_or(s.train_dice);
    if (score > result.best_score) {
      result.best_score = score;
      result.best_epoch = epoch;
      result.best = store;
    }
    if (on_epoch && !on_epoch(s)) break;
  }
  result.last = std::move(store);
  return result;
}

inline std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_dice,val_dice\n";
  for (const auto& s : history) {
    os << s.epoch << ',' << s.train_dice << ',';
    if (s.val_dice) os << *s.val_dice;
    os << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json to_json(const TrainResult& r, const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["dilation_k"] = c.dilation_k;
  j["best_epoch"] = r.best_epoch;
  j["best_score"] = r.best_score;
  j["history"] = nlohmann::ordered_json::array();
  for (const auto& s : r.history) {
    nlohmann::ordered_json e;
    e["epoch"] = s.epoch;
    e["steps"] = s.steps;
    e["loss"] = s.loss;
    e["train_dice"] = s.train_dice;
    e["val_dice"] = s.val_dice ? nlohmann::ordered_json(*s.val_dice) : nlohmann::ordered_json(nullptr);
    j["history"].push_back(e);
  }
  return j;
}

// Detection ---------------------------------------------------------------

struct Detection {
  double x = 0.0, y = 0.0;
  std::size_t cells = 1;  // matching slots this detection offers
};

inline std::vector<Detection> detections(const CountReport& r) {
  std::vector<Detection> out;
  for (const auto& g : r.regions) out.push_back({g.centroid_x, g.centroid_y, g.cell_count});
  return out;
}

struct DetectionCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  DetectionCounts& operator+=(const DetectionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  double precision() const { return tp + fp == 0 ? (fn == 0 ? 1.0 : 0.0) : static_cast<double>(tp) / (tp + fp); }
  double recall() const { return tp + fn == 0 ? (fp == 0 ? 1.0 : 0.0) : static_cast<double>(tp) / (tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

inline constexpr double kDefaultMatchRadius = 20.0;

/// Greedy one-to-one matching of manual points to detection slots by ascending distance.
/// A detection with cell count c offers c slots at its centroid. Ties break on point then
/// detection index, so the result does not depend on floating-point sort instability.
inline DetectionCounts detection_match(const std::vector<Detection>& predicted, const std::vector<Point>& manual,
                                       double radius = kDefaultMatchRadius) {
  require(radius >= 0.0, ErrorCode::InvalidArgument, "match radius must be non-negative");
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < manual.size(); ++i)
    for (std::size_t j = 0; j < predicted.size(); ++j) {
      const double d = std::hypot(manual[i].x - predicted[j].x, manual[i].y - predicted[j].y);
      if (d <= radius) pairs.emplace_back(d, i, j);
    }
  std::sort(pairs.begin(), pairs.end());

  std::vector<bool> point_used(manual.size(), false);
  std::vector<std::size_t> slots_left(predicted.size());
  std::size_t slots = 0;
  for (std::size_t j = 0; j < predicted.size(); ++j) slots += slots_left[j] = predicted[j].cells;

  DetectionCounts c;
  for (const auto& [d, i, j] : pairs) {
    if (point_used[i] || slots_left[j] == 0) continue;
    point_used[i] = true;
    --slots_left[j];
    ++c.tp;
  }
  c.fp = slots - c.tp;
  c.fn = manual.size() - c.tp;
  return c;
}

// Count accuracy ----------------------------------------------------------

struct CountRecord {
  std::string image_id;
  std::size_t manual = 0;
  std::size_t predicted = 0;
};

struct CountAccuracy {
  std::vector<std::optional<double>> per_image;  // empty where the manual count is 0
  double mean = 0.0;                               // over images with a defined accuracy
  double aggregate = 0.0;                          // 1 - |sum pred - sum manual| / sum manual
  std::size_t manual_total = 0, predicted_total = 0;
  std::vector<std::string> warnings;
};

inline CountAccuracy count_accuracy(const std::vector<CountRecord>& records) {
  require(!records.empty(), ErrorCode::InvalidArgument, "count_accuracy needs at least one record");
  CountAccuracy a;
  double sum = 0.0;
  std::size_t defined = 0;
  for (const auto& r : records) {
    a.manual_total += r.manual;
    a.predicted_total += r.predicted;
    if (r.manual == 0) {
      a.per_image.emplace_back();
      a.warnings.push_back("image '" + r.image_id + "' has manual count 0; excluded from per-image accuracy");
      continue;
    }
    const double diff = std::abs(static_cast<double>(r.predicted) - static_cast<double>(r.manual));
    a.per_image.emplace_back(1.0 - diff / static_cast<double>(r.manual));
    sum += *a.per_image.back();
    ++defined;
  }
  a.mean = defined ? sum / static_cast<double>(defined) : 0.0;
  if (defined == 0) a.warnings.push_back("no image has a nonzero manual count; mean accuracy reported as 0");
  if (a.manual_total == 0) {
    a.aggregate = a.predicted_total == 0 ? 1.0 : 0.0;
    a.warnings.push_back("manual total is 0; aggregate accuracy is 1 only if nothing was predicted");
  } else {
    const double diff = std::abs(static_cast<double>(a.predicted_total) - static_cast<double>(a.manual_total));
    a.aggregate = 1.0 - diff / static_cast<double>(a.manual_total);
  }
  return a;
}

/// Evaluation summary: per-image counts and detection, then every aggregate side by side.
inline nlohmann::ordered_json evaluation_json(const std::vector<CountRecord>& records,
                                              const std::vector<DetectionCounts>& per_image_detection,
                                              double match_radius) {
  require(records.size() == per_image_detection.size(), ErrorCode::InvalidArgument,
          "evaluation_json: one detection result per record required");
  const auto acc = count_accuracy(records);
  DetectionCounts total;
  nlohmann::ordered_json j;
  j["images"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& d = per_image_detection[i];
    total += d;
    nlohmann::ordered_json e;
    e["image_id"] = records[i].image_id;
    e["manual_count"] = records[i].manual;
    e["predicted_count"] = records[i].predicted;
    e["accuracy"] = acc.per_image[i] ? nlohmann::ordered_json(*acc.per_image[i]) : nlohmann::ordered_json(nullptr);
    e["tp"] = d.tp;
    e["fp"] = d.fp;
    e["fn"] = d.fn;
    e["f1"] = d.f1();
    j["images"].push_back(e);
  }
  j["manual_total"] = acc.manual_total;
  j["predicted_total"] = acc.predicted_total;
  j["mean_accuracy"] = acc.mean;
  j["aggregate_accuracy"] = acc.aggregate;
  j["match_radius"] = match_radius;
  j["tp"] = total.tp;
  j["fp"] = total.fp;
  j["fn"] = total.fn;
  j["precision"] = total.precision();
  j["recall"] = total.recall();
  j["f1"] = total.f1();
  j["warnings"] = acc.warnings;
  return j;
}

}  // namespace ganglionet
