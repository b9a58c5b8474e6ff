#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ganglionet/tensor.hpp"

namespace ganglionet {

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

/// Single-channel raster, row-major, origin top-left.
template <typename T>
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), data(w * h, fill) {}

  T& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  const T& at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  bool same_extents(std::size_t w, std::size_t h) const { return width == w && height == h; }
  friend bool operator==(const Plane&, const Plane&) = default;
};

/// Values 0 or 1.
using BinaryMask = Plane<std::uint8_t>;
using ProbabilityMap = Plane<float>;

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> fill = {0, 0, 0})
      : width(w), height(h), pixels(w * h * 3) {
    for (std::size_t i = 0; i < w * h; ++i)
      for (int c = 0; c < 3; ++c) pixels[3 * i + c] = fill[c];
  }

  std::uint8_t* px(std::size_t x, std::size_t y) { return &pixels[3 * (y * width + x)]; }
  const std::uint8_t* px(std::size_t x, std::size_t y) const { return &pixels[3 * (y * width + x)]; }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

inline std::size_t count_positive(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto v : m.data) n += v != 0;
  return n;
}

template <typename T>
void require_same_extents(const Plane<T>& a, std::size_t w, std::size_t h, const std::string& what) {
  require(a.same_extents(w, h), ErrorCode::ShapeMismatch,
          what + ": extents " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
              std::to_string(w) + "x" + std::to_string(h));
}

/// Writes a side×side window at (x0,y0) into batch slot `b` of an NHWC tensor, bytes/255,
/// zero outside the image.
inline void load_network_input(const RgbImage& img, std::size_t x0, std::size_t y0, std::size_t side, Tensor& out,
                               std::size_t b) {
  float* dst = out.raw() + b * side * side * 3;
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      float* d = dst + (y * side + x) * 3;
      const std::size_t sx = x0 + x, sy = y0 + y;
      if (sx < img.width && sy < img.height) {
        const auto* s = img.px(sx, sy);
        for (int c = 0; c < 3; ++c) d[c] = static_cast<float>(s[c]) / 255.0f;
      } else {
        d[0] = d[1] = d[2] = 0.0f;
      }
    }
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* where = static_cast<std::string*>(png_get_error_ptr(png));
  *where = msg;
  png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

struct RawPng {
  std::size_t width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // 16-bit samples stored big-endian as in the file
};

inline RawPng read_png_raw(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::MissingInput, "cannot open image '" + path.string() + "'");
  std::uint8_t sig[8];
  require(std::fread(sig, 1, 8, f.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0, ErrorCode::Io,
          "'" + path.string() + "' is not a PNG file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  require(png && info, ErrorCode::Io, "libpng initialisation failed");
  RawPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Io, "decoding '" + path.string() + "': " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * out.height);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline void write_png_raw(const std::filesystem::path& path, std::size_t width, std::size_t height, int color_type,
                          int bit_depth, const std::uint8_t* data) {
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t stride = width * channels * (bit_depth / 8);
  auto tmp = path;
  tmp += ".tmp";
  {
    FilePtr f(std::fopen(tmp.c_str(), "wb"));
    require(f != nullptr, ErrorCode::Io, "cannot open '" + tmp.string() + "' for writing");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    require(png && info, ErrorCode::Io, "libpng initialisation failed");
    std::vector<png_bytep> rows(height);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      fail(ErrorCode::Io, "encoding '" + path.string() + "': " + err);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(data + y * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    require(std::fflush(f.get()) == 0, ErrorCode::Io, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::Io, "cannot move '" + tmp.string() + "' to '" + path.string() + "'");
}

}  // namespace detail

inline RgbImage read_rgb_png(const std::filesystem::path& path) {
  auto raw = detail::read_png_raw(path);
  RgbImage img(raw.width, raw.height);
  const std::size_t bps = raw.bit_depth / 8;
  for (std::size_t i = 0; i < raw.width * raw.height; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t src = raw.channels == 1 ? 0 : c;
      img.pixels[3 * i + c] = raw.bytes[(i * raw.channels + src) * bps];  // high byte for 16-bit
    }
  return img;
}

inline void write_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
  detail::write_png_raw(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 8, img.pixels.data());
}

/// Masks are stored as 8-bit grayscale {0,255}; any nonzero sample reads back as 1.
inline BinaryMask read_mask_png(const std::filesystem::path& path) {
  auto raw = detail::read_png_raw(path);
  require(raw.channels == 1, ErrorCode::Io, "mask '" + path.string() + "' is not grayscale");
  BinaryMask m(raw.width, raw.height);
  const std::size_t bps = raw.bit_depth / 8;
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = raw.bytes[i * bps] != 0 ? 1 : 0;
  return m;
}

inline void write_mask_png(const std::filesystem::path& path, const BinaryMask& m) {
  std::vector<std::uint8_t> bytes(m.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = m.data[i] ? 255 : 0;
  detail::write_png_raw(path, m.width, m.height, PNG_COLOR_TYPE_GRAY, 8, bytes.data());
}

/// 16-bit grayscale, sample = round(p * 65535).
inline void write_probability_png(const std::filesystem::path& path, const ProbabilityMap& p) {
  std::vector<std::uint8_t> bytes(p.data.size() * 2);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double v = std::clamp(static_cast<double>(p.data[i]), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    bytes[2 * i] = static_cast<std::uint8_t>(q >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  detail::write_png_raw(path, p.width, p.height, PNG_COLOR_TYPE_GRAY, 16, bytes.data());
}

inline ProbabilityMap read_probability_png(const std::filesystem::path& path) {
  auto raw = detail::read_png_raw(path);
  require(raw.channels == 1 && raw.bit_depth == 16, ErrorCode::Io,
          "probability map '" + path.string() + "' is not 16-bit grayscale");
  ProbabilityMap p(raw.width, raw.height);
  for (std::size_t i = 0; i < p.data.size(); ++i)
    p.data[i] = static_cast<float>((raw.bytes[2 * i] << 8 | raw.bytes[2 * i + 1]) / 65535.0);
  return p;
}

// ---------------------------------------------------------------------------
// Overlay drawing

using Color = std::array<std::uint8_t, 3>;

inline void put_pixel(RgbImage& img, long x, long y, Color c) {
  if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) return;
  auto* p = img.px(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
  p[0] = c[0];
  p[1] = c[1];
  p[2] = c[2];
}

namespace detail {
// 5x7 glyphs for 0-9, one byte per row, low 5 bits, MSB on the left.
inline constexpr std::array<std::array<std::uint8_t, 7>, 10> kDigitFont = {{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},
}};
}  // namespace detail

/// Renders decimal digits centred on (cx, cy) with a one-pixel dark outline.
inline void draw_number(RgbImage& img, long cx, long cy, std::size_t value, int scale, Color fg,
                        Color outline = {0, 0, 0}) {
  const std::string text = std::to_string(value);
  const long glyph_w = 6 * scale;
  const long left = cx - static_cast<long>(text.size()) * glyph_w / 2;
  const long top = cy - 7 * scale / 2;
  for (int pass = 0; pass < 2; ++pass)
    for (std::size_t i = 0; i < text.size(); ++i) {
      const auto& g = detail::kDigitFont[text[i] - '0'];
      for (long r = 0; r < 7; ++r)
        for (long c = 0; c < 5; ++c) {
          if (!((g[r] >> (4 - c)) & 1)) continue;
          const long x0 = left + static_cast<long>(i) * glyph_w + c * scale, y0 = top + r * scale;
          for (long dy = 0; dy < scale; ++dy)
            for (long dx = 0; dx < scale; ++dx) {
              if (pass == 0) {
                for (long oy = -1; oy <= 1; ++oy)
                  for (long ox = -1; ox <= 1; ++ox) put_pixel(img, x0 + dx + ox, y0 + dy + oy, outline);
              } else {
                put_pixel(img, x0 + dx, y0 + dy, fg);
              }
            }
        }
    }
}

}  // namespace ganglionet
