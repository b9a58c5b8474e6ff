#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ganglionet/image.hpp"

namespace ganglionet {

namespace detail {

// One pass of a running max (dilate) or min (erode) over a window of k along rows or columns.
// Out-of-image samples read as 0, so erosion treats the border as background.
inline BinaryMask square_pass(const BinaryMask& in, std::size_t k, bool horizontal, bool take_max) {
  BinaryMask out(in.width, in.height);
  const long r = static_cast<long>(k / 2);
  const long w = static_cast<long>(in.width), h = static_cast<long>(in.height);
  const long n_lines = horizontal ? h : w, len = horizontal ? w : h;
  std::vector<int> prefix(len + 1);
  for (long line = 0; line < n_lines; ++line) {
    auto sample = [&](long i) -> int {
      return horizontal ? in.data[line * w + i] : in.data[i * w + line];
    };
    prefix[0] = 0;
    for (long i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + (sample(i) != 0);
    for (long i = 0; i < len; ++i) {
      const long lo = i - r, hi = i + r;
      const int ones = prefix[std::min(hi, len - 1) + 1] - prefix[std::max(lo, 0L)];
      std::uint8_t v;
      if (take_max) v = ones > 0;
      else v = lo >= 0 && hi < len && ones == static_cast<int>(k);
      if (horizontal) out.data[line * w + i] = v;
      else out.data[i * w + line] = v;
    }
  }
  return out;
}

inline void require_odd(std::size_t k) {
  require(k % 2 == 1, ErrorCode::InvalidArgument, "structuring element size must be odd, got " + std::to_string(k));
}

}  // namespace detail

/// Dilation by a filled k×k square centred on each pixel.
inline BinaryMask dilate(const BinaryMask& m, std::size_t k) {
  detail::require_odd(k);
  return detail::square_pass(detail::square_pass(m, k, true, true), k, false, true);
}

/// Erosion by a filled k×k square; pixels outside the image count as background.
inline BinaryMask erode(const BinaryMask& m, std::size_t k) {
  detail::require_odd(k);
  return detail::square_pass(detail::square_pass(m, k, true, false), k, false, false);
}

inline BinaryMask open(const BinaryMask& m, std::size_t k) { return dilate(erode(m, k), k); }

struct BoundingBox {
  int min_x = 0, min_y = 0, max_x = 0, max_y = 0;  // inclusive
};

struct Component {
  std::uint32_t label = 0;
  std::size_t area = 0;
  BoundingBox bbox;
  double centroid_x = 0.0;
  double centroid_y = 0.0;
  std::vector<Point> contour;  // clockwise outer boundary, starting at the first pixel in raster order
};

struct Labeling {
  Plane<std::uint32_t> labels;  // 0 = background
  std::vector<Component> components;
};

namespace detail {

// Clockwise neighbour ring in image coordinates (y down), starting west.
inline constexpr std::array<Point, 8> kRing = {{{-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}}};

inline int ring_index(int dx, int dy) {
  for (int i = 0; i < 8; ++i)
    if (kRing[i].x == dx && kRing[i].y == dy) return i;
  return -1;
}

// Moore-neighbour tracing with Jacob's stopping criterion.
inline std::vector<Point> trace_contour(const Plane<std::uint32_t>& labels, std::uint32_t label, Point start,
                                        std::size_t area) {
  auto inside = [&](Point p) {
    return p.x >= 0 && p.y >= 0 && p.x < static_cast<int>(labels.width) && p.y < static_cast<int>(labels.height) &&
           labels.at(p.x, p.y) == label;
  };
  std::vector<Point> contour{start};
  Point cur = start;
  int back = 0;  // west of the raster-first pixel is always background
  const int start_back = back;
  for (std::size_t guard = 0; guard < 4 * area + 16; ++guard) {
    int found = -1;
    for (int i = 1; i <= 8; ++i) {
      const int d = (back + i) % 8;
      if (inside({cur.x + kRing[d].x, cur.y + kRing[d].y})) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    const Point prev{cur.x + kRing[(found + 7) % 8].x, cur.y + kRing[(found + 7) % 8].y};
    const Point next{cur.x + kRing[found].x, cur.y + kRing[found].y};
    back = ring_index(prev.x - next.x, prev.y - next.y);
    cur = next;
    if (cur == start && back == start_back) break;
    contour.push_back(cur);
  }
  return contour;
}

}  // namespace detail

/// 8-connected component labelling. Labels are 1..n in raster order of each component's first pixel.
inline Labeling connected_components(const BinaryMask& m) {
  Labeling out;
  out.labels = Plane<std::uint32_t>(m.width, m.height, 0);
  std::vector<Point> stack;
  const int w = static_cast<int>(m.width), h = static_cast<int>(m.height);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m.at(x, y) || out.labels.at(x, y)) continue;
      Component c;
      c.label = static_cast<std::uint32_t>(out.components.size() + 1);
      c.bbox = {x, y, x, y};
      double sx = 0.0, sy = 0.0;
      out.labels.at(x, y) = c.label;
      stack.assign(1, {x, y});
      while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        ++c.area;
        sx += p.x;
        sy += p.y;
        c.bbox.min_x = std::min(c.bbox.min_x, p.x);
        c.bbox.min_y = std::min(c.bbox.min_y, p.y);
        c.bbox.max_x = std::max(c.bbox.max_x, p.x);
        c.bbox.max_y = std::max(c.bbox.max_y, p.y);
        for (const auto& d : detail::kRing) {
          const int nx = p.x + d.x, ny = p.y + d.y;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          if (!m.at(nx, ny) || out.labels.at(nx, ny)) continue;
          out.labels.at(nx, ny) = c.label;
          stack.push_back({nx, ny});
        }
      }
      c.centroid_x = sx / static_cast<double>(c.area);
      c.centroid_y = sy / static_cast<double>(c.area);
      c.contour = detail::trace_contour(out.labels, c.label, {x, y}, c.area);
      out.components.push_back(std::move(c));
    }
  return out;
}

inline BinaryMask remove_small_components(const BinaryMask& m, std::size_t min_area) {
  const auto lab = connected_components(m);
  BinaryMask out(m.width, m.height);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const auto l = lab.labels.data[i];
    out.data[i] = l != 0 && lab.components[l - 1].area >= min_area;
  }
  return out;
}

}  // namespace ganglionet
