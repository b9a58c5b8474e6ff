#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "ganglionet/annotation.hpp"
#include "ganglionet/image.hpp"
#include "ganglionet/io.hpp"
#include "ganglionet/key_value.hpp"
#include "ganglionet/random.hpp"

namespace ganglionet {

struct SynthSpec {
  std::size_t width = 2560;
  std::size_t height = 1920;
  ScanType scan_type = ScanType::H;
  std::size_t cell_count_min = 40;
  std::size_t cell_count_max = 110;
  double radius_mean = 10.0;
  double radius_std = 1.0;
  double max_eccentricity = 1.5;       // major/minor axis ratio
  double cluster_probability = 0.15;
  std::size_t cluster_size_min = 2;
  std::size_t cluster_size_max = 4;
  double separation_gap = 14.0;        // edge-to-edge gap between cells outside a cluster
  double max_overlap = 0.6;            // cluster members: centre distance >= (2 - max_overlap) * r
  double stain_jitter = 0.12;
  std::size_t distractors_per_megapixel = 40;
  std::size_t max_retries = 2000;
  std::uint64_t seed = 0;

  void validate() const {
    require(width >= 1 && height >= 1, ErrorCode::Config, "synthetic extents must be positive");
    require(radius_mean > 0.0 && radius_std >= 0.0 && radius_mean - 3.0 * radius_std > 1.0, ErrorCode::Config,
            "cell radii must stay positive (mean - 3 std > 1)");
    require(cell_count_min <= cell_count_max, ErrorCode::Config, "cell_count_min exceeds cell_count_max");
    require(cluster_probability >= 0.0 && cluster_probability <= 1.0, ErrorCode::Config,
            "cluster_probability must be in [0,1]");
    require(cluster_size_min >= 2 && cluster_size_min <= cluster_size_max, ErrorCode::Config,
            "cluster sizes need 2 <= min <= max");
    require(max_eccentricity >= 1.0, ErrorCode::Config, "max_eccentricity must be >= 1");
    require(max_overlap >= 0.0 && max_overlap <= 0.6, ErrorCode::Config, "max_overlap must be in [0, 0.6]");
    require(stain_jitter >= 0.0 && stain_jitter <= 1.0, ErrorCode::Config, "stain_jitter must be in [0,1]");
  }
};

struct SynthCell {
  Point centre;
  double radius = 0.0;
  int cluster = -1;  // -1 for isolated cells
};

struct SynthHpf {
  RgbImage image;
  PointAnnotationSet annotations;
  std::vector<SynthCell> cells;
};

namespace detail {

// Smooth value noise in [0,1]: bilinear interpolation of a random lattice with spacing `cell`.
inline std::vector<float> value_noise(std::size_t w, std::size_t h, std::size_t cell, Rng& rng) {
  const std::size_t gw = w / cell + 2, gh = h / cell + 2;
  std::vector<float> lattice(gw * gh);
  for (auto& v : lattice) v = static_cast<float>(rng.uniform());
  std::vector<float> out(w * h);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t gy = y / cell;
    const float fy = static_cast<float>(y % cell) / static_cast<float>(cell);
    const float sy = fy * fy * (3 - 2 * fy);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t gx = x / cell;
      const float fx = static_cast<float>(x % cell) / static_cast<float>(cell);
      const float sx = fx * fx * (3 - 2 * fx);
      const float a = lattice[gy * gw + gx], b = lattice[gy * gw + gx + 1];
      const float c = lattice[(gy + 1) * gw + gx], d = lattice[(gy + 1) * gw + gx + 1];
      out[y * w + x] = (a + (b - a) * sx) + ((c + (d - c) * sx) - (a + (b - a) * sx)) * sy;
    }
  }
  return out;
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

inline void paint_background(RgbImage& img, ScanType scan, Rng& rng) {
  const auto coarse = value_noise(img.width, img.height, 96, rng);
  const auto fine = value_noise(img.width, img.height, 12, rng);
  // H: hematoxylin counterstain, blue-grey; N: pale neutral.
  const std::array<double, 3> base = scan == ScanType::H ? std::array<double, 3>{196, 198, 222}
                                                         : std::array<double, 3>{236, 230, 222};
  const std::array<double, 3> tint = scan == ScanType::H ? std::array<double, 3>{-38, -30, -12}
                                                         : std::array<double, 3>{-14, -14, -16};
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const double t = 0.7 * coarse[i] + 0.3 * fine[i];
    const double grain = (rng.uniform() - 0.5) * 8.0;
    for (int c = 0; c < 3; ++c) img.pixels[3 * i + c] = to_byte(base[c] + tint[c] * t + grain);
  }
}

/// Alpha-blends an anti-aliased filled ellipse; coverage ramps over one pixel at the edge.
inline void paint_ellipse(RgbImage& img, double cx, double cy, double a, double b, double theta,
                          std::array<double, 3> rim, std::array<double, 3> core, double opacity) {
  const double ct = std::cos(theta), st = std::sin(theta);
  const int R = static_cast<int>(std::ceil(std::max(a, b))) + 2;
  const double scale = std::sqrt(a * b);
  for (int y = static_cast<int>(cy) - R; y <= static_cast<int>(cy) + R; ++y)
    for (int x = static_cast<int>(cx) - R; x <= static_cast<int>(cx) + R; ++x) {
      if (x < 0 || y < 0 || x >= static_cast<int>(img.width) || y >= static_cast<int>(img.height)) continue;
      const double dx = x - cx, dy = y - cy;
      const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
      const double d = std::sqrt(u * u + v * v);
      const double cover = std::clamp(0.5 + (1.0 - d) * scale, 0.0, 1.0) * opacity;
      if (cover <= 0.0) continue;
      const double mix = std::clamp(d, 0.0, 1.0);
      auto* p = img.px(x, y);
      for (int c = 0; c < 3; ++c) {
        const double col = core[c] + (rim[c] - core[c]) * mix;
        p[c] = to_byte(p[c] * (1.0 - cover) + col * cover);
      }
    }
}

inline double sample_radius(const SynthSpec& s, Rng& rng) {
  return std::clamp(rng.normal(s.radius_mean, s.radius_std), s.radius_mean - 3 * s.radius_std,
                    s.radius_mean + 3 * s.radius_std);
}

}  // namespace detail

/// Renders one synthetic HPF. Cell centres are the exact annotations.
inline SynthHpf generate_hpf(const SynthSpec& spec, const std::string& image_id = "synthetic") {
  spec.validate();
  SynthHpf out;
  out.image = RgbImage(spec.width, spec.height);
  Rng bg_rng(derive_seed(spec.seed, 1)), place_rng(derive_seed(spec.seed, 2)), paint_rng(derive_seed(spec.seed, 3));
  detail::paint_background(out.image, spec.scan_type, bg_rng);

  if (spec.scan_type == ScanType::H) {
    // Hematoxylin-stained non-target nuclei: small blue-purple ellipses.
    const auto n = static_cast<std::size_t>(static_cast<double>(spec.width * spec.height) / 1e6 *
                                            static_cast<double>(spec.distractors_per_megapixel));
    for (std::size_t i = 0; i < n; ++i) {
      const double r = bg_rng.uniform(3.0, 6.0);
      detail::paint_ellipse(out.image, bg_rng.uniform(0.0, static_cast<double>(spec.width)),
                            bg_rng.uniform(0.0, static_cast<double>(spec.height)), r * 1.2, r / 1.2,
                            bg_rng.uniform(0.0, std::numbers::pi), {110, 100, 160}, {80, 70, 140}, 0.85);
    }
  }

  const std::size_t target = spec.cell_count_min + place_rng.below(spec.cell_count_max - spec.cell_count_min + 1);
  auto& cells = out.cells;
  const double min_overlap_dist = 2.0 - spec.max_overlap;

  auto fits = [&](Point c, double r, int cluster, std::size_t partner) {
    if (c.x < r + 1 || c.y < r + 1 || c.x > static_cast<double>(spec.width) - r - 2 ||
        c.y > static_cast<double>(spec.height) - r - 2)
      return false;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const double d = std::hypot(c.x - cells[i].centre.x, c.y - cells[i].centre.y);
      const double mean_r = 0.5 * (r + cells[i].radius);
      if (cluster >= 0 && cells[i].cluster == cluster) {
        if (d < min_overlap_dist * mean_r) return false;
        if (i == partner && d > 2.0 * mean_r) return false;
      } else if (d < r + cells[i].radius + spec.separation_gap) {
        return false;
      }
    }
    return true;
  };
  auto random_centre = [&](double r) {
    return Point{static_cast<int>(place_rng.between(static_cast<long long>(r) + 1,
                                                    static_cast<long long>(spec.width) - static_cast<long long>(r) - 3)),
                 static_cast<int>(place_rng.between(static_cast<long long>(r) + 1,
                                                    static_cast<long long>(spec.height) - static_cast<long long>(r) - 3))};
  };
  auto placement_failure = [&] {
    fail(ErrorCode::Placement, "placed only " + std::to_string(cells.size()) + " of " + std::to_string(target) +
                                   " cells in " + std::to_string(spec.width) + "x" + std::to_string(spec.height) +
                                   " after " + std::to_string(spec.max_retries) + " retries");
  };

  int n_clusters = 0;
  while (cells.size() < target) {
    const std::size_t remaining = target - cells.size();
    std::size_t group = 1;
    if (remaining >= spec.cluster_size_min && place_rng.uniform() < spec.cluster_probability)
      group = std::min(remaining, spec.cluster_size_min +
                                      place_rng.below(spec.cluster_size_max - spec.cluster_size_min + 1));
    const int cluster = group > 1 ? n_clusters++ : -1;

    // First member anywhere with a clear margin; later members hug a random earlier member.
    const std::size_t first = cells.size();
    bool placed = false;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      const double r = detail::sample_radius(spec, place_rng);
      const Point c = random_centre(r + (group > 1 ? 3 * spec.radius_mean : 0.0));
      if (fits(c, r, -1, 0)) {
        cells.push_back({c, r, cluster});
        placed = true;
      }
    }
    if (!placed) placement_failure();
    for (std::size_t m = 1; m < group; ++m) {
      placed = false;
      for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
        const std::size_t partner = first + place_rng.below(cells.size() - first);
        const double r = detail::sample_radius(spec, place_rng);
        const double mean_r = 0.5 * (r + cells[partner].radius);
        const double dist = place_rng.uniform(1.4, 2.0) * mean_r;
        const double ang = place_rng.uniform(0.0, 2.0 * std::numbers::pi);
        const Point c{static_cast<int>(std::lround(cells[partner].centre.x + dist * std::cos(ang))),
                      static_cast<int>(std::lround(cells[partner].centre.y + dist * std::sin(ang)))};
        if (fits(c, r, cluster, partner)) {
          cells.push_back({c, r, cluster});
          placed = true;
        }
      }
      if (!placed) placement_failure();
    }
  }

  for (const auto& cell : cells) {
    const double ecc = paint_rng.uniform(1.0, spec.max_eccentricity);
    const double a = cell.radius * std::sqrt(ecc), b = cell.radius / std::sqrt(ecc);
    const double j = 1.0 + spec.stain_jitter * (2.0 * paint_rng.uniform() - 1.0);
    const std::array<double, 3> rim{150 * j, 95 * j, 50 * j}, core{115 * j, 68 * j, 35 * j};
    detail::paint_ellipse(out.image, cell.centre.x, cell.centre.y, a, b, paint_rng.uniform(0.0, std::numbers::pi),
                          rim, core, 0.95);
  }

  out.annotations.image_id = image_id;
  out.annotations.scan_type = spec.scan_type;
  for (const auto& c : cells) out.annotations.points.push_back(c.centre);
  return out;
}

struct SuiteEntry {
  std::string image_id;
  std::string split;  // "train" or "test"
  std::filesystem::path image, points, manifest;
};

inline KeyValues synth_spec_values(const SynthSpec& s) {
  KeyValues kv;
  kv.set("width", std::to_string(s.width));
  kv.set("height", std::to_string(s.height));
  kv.set("scan_type", to_string(s.scan_type));
  kv.set("cell_count_min", std::to_string(s.cell_count_min));
  kv.set("cell_count_max", std::to_string(s.cell_count_max));
  std::ostringstream os;
  os.precision(17);
  auto num = [&](double v) {
    os.str("");
    os << v;
    return os.str();
  };
  kv.set("radius_mean", num(s.radius_mean));
  kv.set("radius_std", num(s.radius_std));
  kv.set("max_eccentricity", num(s.max_eccentricity));
  kv.set("cluster_probability", num(s.cluster_probability));
  kv.set("cluster_size_min", std::to_string(s.cluster_size_min));
  kv.set("cluster_size_max", std::to_string(s.cluster_size_max));
  kv.set("separation_gap", num(s.separation_gap));
  kv.set("max_overlap", num(s.max_overlap));
  kv.set("stain_jitter", num(s.stain_jitter));
  kv.set("distractors_per_megapixel", std::to_string(s.distractors_per_megapixel));
  kv.set("max_retries", std::to_string(s.max_retries));
  kv.set("seed", std::to_string(s.seed));
  return kv;
}

inline constexpr const char* kSuiteManifest = "suite.manifest";

/// Writes `<id>.png`, `<id>.csv`, `<id>.manifest` per HPF and finally `suite.manifest`.
/// Every file is written atomically and the suite manifest goes last, so an aborted run
/// never leaves a manifest that points at missing files.
inline std::vector<SuiteEntry> generate_suite(const std::filesystem::path& dir, std::size_t n_train,
                                              std::size_t n_test, const SynthSpec& tmpl, std::uint64_t seed) {
  require(n_train >= 5, ErrorCode::InvalidArgument,
          "a suite needs at least 5 training images for the five-fold split, got " + std::to_string(n_train));
  tmpl.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::Io, "cannot create '" + dir.string() + "': " + ec.message());

  std::vector<SuiteEntry> entries;
  std::string train_ids, test_ids;
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    const bool train = i < n_train;
    char id[32];
    std::snprintf(id, sizeof id, "%s_%02zu", train ? "train" : "test", train ? i : i - n_train);
    SynthSpec s = tmpl;
    s.seed = derive_seed(seed, i);
    const auto hpf = generate_hpf(s, id);

    SuiteEntry e{id, train ? "train" : "test", dir / (std::string(id) + ".png"), dir / (std::string(id) + ".csv"),
                 dir / (std::string(id) + ".manifest")};
    write_rgb_png(e.image, hpf.image);
    write_file_atomic(e.points, format_points_csv(hpf.annotations.points));
    auto kv = annotation_manifest(hpf.annotations);
    kv.set("split", e.split);
    kv.set("image", e.image.filename().string());
    kv.set("points", e.points.filename().string());
    kv.set("cell_count", std::to_string(hpf.annotations.points.size()));
    kv.set("width", std::to_string(s.width));
    kv.set("height", std::to_string(s.height));
    kv.set("seed", std::to_string(s.seed));
    kv.save(e.manifest);
    (train ? train_ids : test_ids) += (((train ? train_ids : test_ids).empty()) ? "" : ",") + std::string(id);
    entries.push_back(std::move(e));
  }

  auto suite = synth_spec_values(tmpl);
  suite.set("suite_seed", std::to_string(seed));
  suite.set("n_train", std::to_string(n_train));
  suite.set("n_test", std::to_string(n_test));
  suite.set("train", train_ids);
  suite.set("test", test_ids);
  suite.save(dir / kSuiteManifest);
  return entries;
}

/// Reads `suite.manifest` and checks that every referenced file exists.
inline std::vector<SuiteEntry> load_suite(const std::filesystem::path& dir) {
  const auto suite = KeyValues::load(dir / kSuiteManifest);
  std::vector<SuiteEntry> entries;
  for (const std::string split : {"train", "test"}) {
    std::stringstream ss(suite.get(split));
    std::string id;
    while (std::getline(ss, id, ',')) {
      if (id.empty()) continue;
      const auto kv = KeyValues::load(dir / (id + ".manifest"));
      SuiteEntry e{id, split, dir / kv.get("image"), dir / kv.get("points"), dir / (id + ".manifest")};
      for (const auto& p : {e.image, e.points})
        require(std::filesystem::exists(p), ErrorCode::MissingInput, "suite references missing file '" + p.string() + "'");
      entries.push_back(std::move(e));
    }
  }
  return entries;
}

}  // namespace ganglionet
