#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "ganglionet/image.hpp"
#include "ganglionet/nabla_net.hpp"

namespace ganglionet {

struct Tile {
  std::size_t row = 0, col = 0;
  std::size_t x0 = 0, y0 = 0;
};

/// Non-overlapping grid over the image, zero-padded on the right and bottom.
struct TilePlan {
  std::size_t width = 0, height = 0, side = 128;
  std::size_t cols = 0, rows = 0;
  std::size_t pad_right = 0, pad_bottom = 0;
  std::vector<Tile> tiles;  // row-major
};

inline TilePlan plan_tiles(std::size_t width, std::size_t height, std::size_t side = 128) {
  require(width >= 1 && height >= 1 && side >= 1, ErrorCode::InvalidArgument, "tiling needs positive extents");
  TilePlan p;
  p.width = width;
  p.height = height;
  p.side = side;
  p.cols = (width + side - 1) / side;
  p.rows = (height + side - 1) / side;
  p.pad_right = p.cols * side - width;
  p.pad_bottom = p.rows * side - height;
  for (std::size_t r = 0; r < p.rows; ++r)
    for (std::size_t c = 0; c < p.cols; ++c) p.tiles.push_back({r, c, c * side, r * side});
  return p;
}

template <typename T>
std::vector<Plane<T>> split_tiles(const Plane<T>& image, const TilePlan& plan) {
  require_same_extents(image, plan.width, plan.height, "split_tiles");
  std::vector<Plane<T>> out;
  out.reserve(plan.tiles.size());
  for (const auto& t : plan.tiles) {
    Plane<T> tile(plan.side, plan.side, T{});
    for (std::size_t y = 0; y < plan.side && t.y0 + y < plan.height; ++y)
      for (std::size_t x = 0; x < plan.side && t.x0 + x < plan.width; ++x) tile.at(x, y) = image.at(t.x0 + x, t.y0 + y);
    out.push_back(std::move(tile));
  }
  return out;
}

/// Inverse of split_tiles; padded pixels are discarded.
template <typename T>
Plane<T> merge_tiles(const std::vector<Plane<T>>& tiles, const TilePlan& plan) {
  require(tiles.size() == plan.tiles.size(), ErrorCode::InvalidArgument,
          "merge_tiles: " + std::to_string(tiles.size()) + " tiles for a plan of " + std::to_string(plan.tiles.size()));
  Plane<T> out(plan.width, plan.height);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& t = plan.tiles[i];
    for (std::size_t y = 0; y < plan.side && t.y0 + y < plan.height; ++y)
      for (std::size_t x = 0; x < plan.side && t.x0 + x < plan.width; ++x) out.at(t.x0 + x, t.y0 + y) = tiles[i].at(x, y);
  }
  return out;
}

/// Maps a [B,side,side,3] batch to [B,side,side,1] probabilities. Must be safe to call concurrently.
using TileModel = std::function<Tensor(const Tensor&)>;

/// Worker count: GANGLIONET_THREADS if set (>= 1), otherwise the hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("GANGLIONET_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    require(n >= 1, ErrorCode::Config, std::string("GANGLIONET_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. The first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Tiles the image, runs the model batch by batch and merges the tile outputs.
/// Each tile is written to a disjoint region, so the result does not depend on execution order.
inline ProbabilityMap infer_image(const RgbImage& img, const TileModel& model, std::size_t side,
                                  std::size_t batch_size, std::size_t workers = 1) {
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch size must be positive");
  const auto plan = plan_tiles(img.width, img.height, side);
  ProbabilityMap out(img.width, img.height);
  const std::size_t n_batches = (plan.tiles.size() + batch_size - 1) / batch_size;
  parallel_for(n_batches, workers, [&](std::size_t bi) {
    const std::size_t first = bi * batch_size, count = std::min(batch_size, plan.tiles.size() - first);
    Tensor batch(Shape{count, side, side, 3});
    for (std::size_t k = 0; k < count; ++k)
      load_network_input(img, plan.tiles[first + k].x0, plan.tiles[first + k].y0, side, batch, k);
    const Tensor probs = model(batch);
    require(probs.shape() == (Shape{count, side, side, 1}), ErrorCode::ShapeMismatch,
            "model returned " + shape_string(probs.shape()) + " for a batch of " + shape_string(batch.shape()));
    for (std::size_t k = 0; k < count; ++k) {
      const auto& t = plan.tiles[first + k];
      for (std::size_t y = 0; y < side && t.y0 + y < plan.height; ++y)
        for (std::size_t x = 0; x < side && t.x0 + x < plan.width; ++x)
          out.at(t.x0 + x, t.y0 + y) = probs.at(k, y, x, 0);
    }
  });
  return out;
}

inline ProbabilityMap infer_image(const RgbImage& img, const ParamStore& store, const NablaArchitecture& arch,
                                  std::size_t batch_size, std::size_t workers = 1) {
  arch.validate();
  require_store_matches(store, arch);
  return infer_image(
      img, [&](const Tensor& batch) { return network_forward(store, arch, batch); }, arch.patch_side, batch_size,
      workers);
}

/// Strict: pixels exactly at `tau` are background.
inline BinaryMask threshold_map(const ProbabilityMap& p, double tau = 0.5) {
  BinaryMask m(p.width, p.height);
  for (std::size_t i = 0; i < p.data.size(); ++i) m.data[i] = p.data[i] > tau;
  return m;
}

}  // namespace ganglionet
