#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ddsm/error.hpp"
#include "ddsm/grid.hpp"

namespace ddsm {

struct Rgb {
  unsigned char r, g, b;
};

// Piecewise-linear blue -> cyan -> yellow -> red map on [0,1].
inline Rgb colormap(double v) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0.05, 0.05, 0.45}, {0.10, 0.45, 0.90}, {0.30, 0.85, 0.75}, {0.98, 0.85, 0.20}, {0.75, 0.05, 0.05}}};
  if (!std::isfinite(v)) v = 0.0;
  v = std::clamp(v, 0.0, 1.0) * static_cast<double>(stops.size() - 1);
  const std::size_t i = std::min(static_cast<std::size_t>(v), stops.size() - 2);
  const double t = v - static_cast<double>(i);
  auto ch = [&](int c) {
    const double x = (1.0 - t) * stops[i][c] + t * stops[i + 1][c];
    return static_cast<unsigned char>(std::lround(255.0 * x));
  };
  return {ch(0), ch(1), ch(2)};
}

// RGB rows, top row first, where the top row is the largest x2.
inline std::vector<unsigned char> heatmap_pixels(const IndexField& f, std::size_t scale = 1) {
  const auto& g = f.grid;
  if (f.values.size() != g.size()) throw ConfigError("field does not match its grid");
  if (scale < 1) throw ConfigError("render scale must be positive");
  const std::size_t w = g.n1 * scale, h = g.n2 * scale;
  std::vector<unsigned char> px(w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t j = g.n2 - 1 - y / scale, i = x / scale;
      const Rgb c = colormap(f.values[g.index(i, j)]);
      unsigned char* p = &px[(y * w + x) * 3];
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
  return px;
}

inline void render_heatmap(const IndexField& f, const std::string& path, std::size_t scale = 4) {
  const auto px = heatmap_pixels(f, scale);
  const auto w = static_cast<png_uint_32>(f.grid.n1 * scale), h = static_cast<png_uint_32>(f.grid.n2 * scale);
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("failed writing " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < h; ++y) png_write_row(png, px.data() + static_cast<std::size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("failed closing " + path);
}

}  // namespace ddsm
