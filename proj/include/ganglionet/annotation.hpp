#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ganglionet/image.hpp"
#include "ganglionet/key_value.hpp"
#include "ganglionet/morphology.hpp"
#include "ganglionet/random.hpp"

namespace ganglionet {

enum class ScanType { H, N };

inline std::string to_string(ScanType s) { return s == ScanType::H ? "H" : "N"; }

inline ScanType parse_scan_type(const std::string& s) {
  if (s == "H" || s == "h") return ScanType::H;
  if (s == "N" || s == "n") return ScanType::N;
  fail(ErrorCode::Config, "scan type must be H or N, got '" + s + "'");
}

/// One point per ganglion cell, integer pixel centres, origin top-left.
struct PointAnnotationSet {
  std::vector<Point> points;
  std::string image_id;
  ScanType scan_type = ScanType::H;
  std::string magnification = "200x";

  void validate(std::size_t width, std::size_t height) const {
    std::set<Point> seen;
    for (const auto& p : points) {
      require(p.x >= 0 && p.y >= 0 && static_cast<std::size_t>(p.x) < width && static_cast<std::size_t>(p.y) < height,
              ErrorCode::InvalidArgument,
              "annotation (" + std::to_string(p.x) + "," + std::to_string(p.y) + ") of '" + image_id +
                  "' lies outside " + std::to_string(width) + "x" + std::to_string(height));
      require(seen.insert(p).second, ErrorCode::InvalidArgument,
              "duplicate annotation (" + std::to_string(p.x) + "," + std::to_string(p.y) + ") in '" + image_id + "'");
    }
  }
};

inline std::string format_points_csv(const std::vector<Point>& points) {
  std::string out;
  for (const auto& p : points) out += std::to_string(p.x) + "," + std::to_string(p.y) + "\n";
  return out;
}

inline std::vector<Point> parse_points_csv(const std::string& text, const std::string& origin = "<csv>") {
  std::vector<Point> pts;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    long x, y;
    char comma;
    std::string rest;
    const bool ok = static_cast<bool>(ls >> x >> comma >> y) && comma == ',' && !(ls >> rest);
    require(ok, ErrorCode::Io, origin + ":" + std::to_string(n) + ": expected 'x,y', got '" + line + "'");
    pts.push_back({static_cast<int>(x), static_cast<int>(y)});
  }
  return pts;
}

inline KeyValues annotation_manifest(const PointAnnotationSet& a) {
  KeyValues kv;
  kv.set("image_id", a.image_id);
  kv.set("scan_type", to_string(a.scan_type));
  kv.set("magnification", a.magnification);
  return kv;
}

/// Reads `<stem>.csv` plus its `<stem>.manifest`.
inline PointAnnotationSet load_annotations(const std::filesystem::path& csv, const std::filesystem::path& manifest) {
  PointAnnotationSet a;
  a.points = parse_points_csv(read_file(csv), csv.string());
  const auto kv = KeyValues::load(manifest);
  a.image_id = kv.get("image_id");
  a.scan_type = parse_scan_type(kv.get("scan_type"));
  a.magnification = kv.find("magnification").value_or("200x");
  return a;
}

struct MaskSpec {
  double sigma = 3.0;
  std::size_t dilation_k = 13;
  double threshold = 0.5;

  void validate() const {
    require(sigma > 0.0, ErrorCode::Config, "sigma must be positive");
    require(dilation_k >= 5 && dilation_k <= 13 && dilation_k % 2 == 1, ErrorCode::Config,
            "dilation kernel must be one of 5,7,9,11,13, got " + std::to_string(dilation_k));
  }
};

inline double gaussian_value(double dx, double dy, double sigma) {
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

/// Radius beyond which a kernel contributes less than 1e-6 and is not rasterised.
inline int gaussian_window(double sigma) { return static_cast<int>(std::ceil(sigma * std::sqrt(2.0 * std::log(1e6)))); }

/// G(x,y) = max over points of exp(-d^2 / 2 sigma^2).
inline ProbabilityMap density_surface(const std::vector<Point>& points, double sigma, std::size_t width,
                                      std::size_t height) {
  ProbabilityMap g(width, height, 0.0f);
  const int r = gaussian_window(sigma);
  for (const auto& p : points) {
    const int x0 = std::max(0, p.x - r), x1 = std::min(static_cast<int>(width) - 1, p.x + r);
    const int y0 = std::max(0, p.y - r), y1 = std::min(static_cast<int>(height) - 1, p.y + r);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const auto v = static_cast<float>(gaussian_value(x - p.x, y - p.y, sigma));
        g.at(x, y) = std::max(g.at(x, y), v);
      }
  }
  return g;
}

inline BinaryMask make_mask(const ProbabilityMap& g, const MaskSpec& spec) {
  spec.validate();
  BinaryMask m(g.width, g.height);
  for (std::size_t i = 0; i < g.data.size(); ++i) m.data[i] = g.data[i] > spec.threshold;
  return dilate(m, spec.dilation_k);
}

inline BinaryMask make_mask(const PointAnnotationSet& a, std::size_t width, std::size_t height, const MaskSpec& spec) {
  a.validate(width, height);
  return make_mask(density_surface(a.points, spec.sigma, width, height), spec);
}

struct PatchPair {
  RgbImage image;
  BinaryMask mask;
  std::string image_id;
  int x0 = 0, y0 = 0;
  int flip = 0;  // bit 0 horizontal, bit 1 vertical
};

inline RgbImage crop(const RgbImage& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  RgbImage out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    std::copy_n(img.px(x0, y0 + y), 3 * w, out.px(0, y));
  return out;
}

template <typename T>
Plane<T> crop(const Plane<T>& p, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  Plane<T> out(w, h);
  for (std::size_t y = 0; y < h; ++y) std::copy_n(&p.at(x0, y0 + y), w, &out.at(0, y));
  return out;
}

/// Slides a side×side window at `stride`; keeps windows whose mask has a positive pixel.
inline std::vector<PatchPair> extract_training_patches(const RgbImage& img, const BinaryMask& mask,
                                                       const std::string& image_id, std::size_t stride = 64,
                                                       std::size_t side = 128) {
  require_same_extents(mask, img.width, img.height, "mask vs image '" + image_id + "'");
  require(img.width >= side && img.height >= side, ErrorCode::InvalidArgument,
          "image '" + image_id + "' is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
              ", smaller than the " + std::to_string(side) + " px patch");
  require(stride >= 1, ErrorCode::InvalidArgument, "patch stride must be positive");
  std::vector<PatchPair> out;
  for (std::size_t y0 = 0; y0 + side <= img.height; y0 += stride)
    for (std::size_t x0 = 0; x0 + side <= img.width; x0 += stride) {
      auto m = crop(mask, x0, y0, side, side);
      if (count_positive(m) == 0) continue;
      out.push_back({crop(img, x0, y0, side, side), std::move(m), image_id, static_cast<int>(x0),
                     static_cast<int>(y0), 0});
    }
  return out;
}

inline RgbImage flip_image(const RgbImage& img, bool horizontal, bool vertical) {
  RgbImage out(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t sx = horizontal ? img.width - 1 - x : x, sy = vertical ? img.height - 1 - y : y;
      std::copy_n(img.px(sx, sy), 3, out.px(x, y));
    }
  return out;
}

template <typename T>
Plane<T> flip_plane(const Plane<T>& p, bool horizontal, bool vertical) {
  Plane<T> out(p.width, p.height);
  for (std::size_t y = 0; y < p.height; ++y)
    for (std::size_t x = 0; x < p.width; ++x)
      out.at(x, y) = p.at(horizontal ? p.width - 1 - x : x, vertical ? p.height - 1 - y : y);
  return out;
}

/// Original, h-flip, v-flip, hv-flip of each pair, in that order.
inline std::vector<PatchPair> augment_flips(const std::vector<PatchPair>& pairs) {
  std::vector<PatchPair> out;
  out.reserve(pairs.size() * 4);
  for (const auto& p : pairs)
    for (int f = 0; f < 4; ++f) {
      const bool h = f & 1, v = f & 2;
      out.push_back({flip_image(p.image, h, v), flip_plane(p.mask, h, v), p.image_id, p.x0, p.y0, p.flip ^ f});
    }
  return out;
}

struct Fold {
  std::vector<std::string> val_images;
  std::vector<std::size_t> train;  // indices into the pair list
  std::vector<std::size_t> val;
};

/// Groups pairs by source image, shuffles the groups with `seed` and deals them round-robin
/// into `n_folds` validation sets.
inline std::vector<Fold> fivefold_split(const std::vector<PatchPair>& pairs, std::uint64_t seed,
                                        std::size_t n_folds = 5) {
  std::vector<std::string> ids;
  for (const auto& p : pairs) ids.push_back(p.image_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  require(ids.size() >= n_folds, ErrorCode::InvalidArgument,
          std::to_string(n_folds) + "-fold split needs at least " + std::to_string(n_folds) + " source images, got " +
              std::to_string(ids.size()));
  Rng rng(seed);
  rng.shuffle(ids);

  std::vector<Fold> folds(n_folds);
  std::map<std::string, std::size_t> fold_of;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    fold_of[ids[i]] = i % n_folds;
    folds[i % n_folds].val_images.push_back(ids[i]);
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto f = fold_of.at(pairs[i].image_id);
    for (std::size_t k = 0; k < n_folds; ++k) (k == f ? folds[k].val : folds[k].train).push_back(i);
  }
  return folds;
}

}  // namespace ganglionet
