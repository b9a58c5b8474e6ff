#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganglionet/annotation.hpp"
#include "ganglionet/morphology.hpp"

namespace ganglionet {

struct CountingCalibration {
  ScanType scan_type = ScanType::H;
  std::size_t dilation_k = 13;
  double avg_pixels_per_cell = 350.0;
  double t1 = 900.0;  // H-type: above t1 subtract one cell
  double t2 = 1250.0;  // H-type: above t2 subtract two

  void validate() const {
    require(avg_pixels_per_cell > 0.0, ErrorCode::Calibration, "avg_pixels_per_cell must be positive");
    require(t1 < t2, ErrorCode::Calibration, "correction thresholds need t1 < t2");
  }
};

/// Published averages: H 350 / N 270 px for 13x13 masks, H 320 / N 250 px for 11x11.
inline CountingCalibration default_calibration(ScanType scan, std::size_t k) {
  CountingCalibration c;
  c.scan_type = scan;
  c.dilation_k = k;
  if (k == 13) c.avg_pixels_per_cell = scan == ScanType::H ? 350.0 : 270.0;
  else if (k == 11) c.avg_pixels_per_cell = scan == ScanType::H ? 320.0 : 250.0;
  else fail(ErrorCode::Calibration, "no default cell area for " + std::to_string(k) + "x" + std::to_string(k) +
                                         " masks; run calibrate");
  return c;
}

/// Cells in one region. H-type subtracts 1 above t1 and 2 above t2; both types clamp to >= 1.
inline std::size_t count_region(std::size_t area, const CountingCalibration& c) {
  long raw = static_cast<long>(std::floor(static_cast<double>(area) / c.avg_pixels_per_cell));
  if (c.scan_type == ScanType::H) {
    if (static_cast<double>(area) > c.t2) raw -= 2;
    else if (static_cast<double>(area) > c.t1) raw -= 1;
  }
  return static_cast<std::size_t>(std::max(1L, raw));
}

/// Opening with a k×k square, then removal of components smaller than `min_region_area`.
inline BinaryMask refine_mask(const BinaryMask& mask, std::size_t k = 13, std::size_t min_region_area = 60) {
  return remove_small_components(open(mask, k), min_region_area);
}

struct RegionReport {
  std::uint32_t label = 0;
  std::size_t area = 0;
  BoundingBox bbox;
  double centroid_x = 0.0, centroid_y = 0.0;
  std::vector<Point> contour;
  std::size_t cell_count = 0;
  bool is_ganglia = false;
};

struct CountReport {
  std::string image_id;
  ScanType scan_type = ScanType::H;
  CountingCalibration calibration;
  std::vector<RegionReport> regions;
  std::size_t total_cells = 0;
  std::size_t total_regions = 0;
  std::size_t total_ganglia = 0;
};

/// Labels the (already refined) mask and applies count_region to every component.
inline CountReport count_image(const BinaryMask& refined, const CountingCalibration& calib,
                               const std::string& image_id) {
  calib.validate();
  CountReport r;
  r.image_id = image_id;
  r.scan_type = calib.scan_type;
  r.calibration = calib;
  for (auto& c : connected_components(refined).components) {
    RegionReport reg;
    reg.label = c.label;
    reg.area = c.area;
    reg.bbox = c.bbox;
    reg.centroid_x = c.centroid_x;
    reg.centroid_y = c.centroid_y;
    reg.contour = std::move(c.contour);
    reg.cell_count = count_region(c.area, calib);
    reg.is_ganglia = reg.cell_count >= 2;
    r.total_cells += reg.cell_count;
    r.total_ganglia += reg.is_ganglia;
    r.regions.push_back(std::move(reg));
  }
  r.total_regions = r.regions.size();
  return r;
}

inline nlohmann::ordered_json to_json(const CountReport& r) {
  nlohmann::ordered_json j;
  j["image_id"] = r.image_id;
  j["scan_type"] = to_string(r.scan_type);
  j["calibration"] = {{"dilation_k", r.calibration.dilation_k},
                      {"avg_pixels_per_cell", r.calibration.avg_pixels_per_cell},
                      {"t1", r.calibration.t1},
                      {"t2", r.calibration.t2}};
  auto regions = nlohmann::ordered_json::array();
  for (const auto& g : r.regions)
    regions.push_back({{"label", g.label},
                       {"area", g.area},
                       {"cell_count", g.cell_count},
                       {"is_ganglia", g.is_ganglia},
                       {"bbox", {g.bbox.min_x, g.bbox.min_y, g.bbox.max_x, g.bbox.max_y}},
                       {"centroid", {g.centroid_x, g.centroid_y}}});
  j["regions"] = std::move(regions);
  j["total_cells"] = r.total_cells;
  j["total_regions"] = r.total_regions;
  j["total_ganglia"] = r.total_ganglia;
  return j;
}

/// Region contours in green and per-region cell counts in yellow at the centroid.
inline RgbImage render_overlay(const RgbImage& image, const CountReport& r) {
  RgbImage out = image;
  constexpr Color contour{0, 230, 0}, text{255, 235, 0};
  for (const auto& g : r.regions)
    for (const auto& p : g.contour) put_pixel(out, p.x, p.y, contour);
  for (const auto& g : r.regions)
    draw_number(out, std::lround(g.centroid_x), std::lround(g.centroid_y), g.cell_count, 2, text);
  return out;
}

/// Components of `refined` that contain exactly one annotated point.
inline std::vector<std::size_t> single_cell_areas(const BinaryMask& refined, const std::vector<Point>& points) {
  const auto lab = connected_components(refined);
  std::vector<std::size_t> hits(lab.components.size(), 0);
  for (const auto& p : points) {
    if (p.x < 0 || p.y < 0 || p.x >= static_cast<int>(refined.width) || p.y >= static_cast<int>(refined.height))
      continue;
    if (const auto l = lab.labels.at(p.x, p.y)) ++hits[l - 1];
  }
  std::vector<std::size_t> areas;
  for (std::size_t i = 0; i < hits.size(); ++i)
    if (hits[i] == 1) areas.push_back(lab.components[i].area);
  return areas;
}

struct CalibrationSample {
  BinaryMask refined;
  std::vector<Point> points;
};

inline constexpr std::size_t kMinCalibrationRegions = 10;

/// Mean area of single-cell regions across the samples; thresholds keep their defaults.
inline CountingCalibration calibrate_cell_area(const std::vector<CalibrationSample>& samples, ScanType scan,
                                               std::size_t k) {
  std::vector<std::size_t> areas;
  for (const auto& s : samples) {
    auto a = single_cell_areas(s.refined, s.points);
    areas.insert(areas.end(), a.begin(), a.end());
  }
  require(areas.size() >= kMinCalibrationRegions, ErrorCode::Calibration,
          "only " + std::to_string(areas.size()) + " single-cell regions found, need at least " +
              std::to_string(kMinCalibrationRegions));
  double sum = 0.0;
  for (auto a : areas) sum += static_cast<double>(a);
  CountingCalibration c;
  c.scan_type = scan;
  c.dilation_k = k;
  c.avg_pixels_per_cell = sum / static_cast<double>(areas.size());
  return c;
}

}  // namespace ganglionet
