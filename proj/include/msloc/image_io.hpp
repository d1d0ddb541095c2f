// 8-bit graymap (P5) and RGB PNG output, plus overlay rendering.
#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "msloc/bbox.hpp"
#include "msloc/tensor.hpp"

namespace msloc {

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const GrayImage&) const = default;
};

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB
};

inline void write_pgm(const std::string& path, const GrayImage& img) {
  if (img.pixels.size() != img.height * img.width) throw std::invalid_argument("write_pgm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw std::runtime_error("failed writing '" + path + "'");
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image '" + path + "'");
  auto token = [&]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t.push_back(ch);
      }
    }
    return t;
  };
  if (token() != "P5") throw std::runtime_error("'" + path + "' is not a binary graymap (P5)");
  GrayImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw std::runtime_error("only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw std::runtime_error("malformed graymap header in '" + path + "'");
  }
  img.pixels.resize(img.width * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw std::runtime_error("truncated graymap '" + path + "'");
  return img;
}

/// Min-max scales a grid to 0..255; a constant grid maps to 0.
inline GrayImage grid_to_gray(const Grid& g) {
  GrayImage img{g.rows, g.cols, std::vector<std::uint8_t>(g.values.size(), 0)};
  const double lo = g.min(), hi = g.max();
  if (hi > lo)
    for (std::size_t i = 0; i < g.values.size(); ++i)
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (g.values[i] - lo) / (hi - lo)));
  return img;
}

inline void write_png(const std::string& path, const RgbImage& img) {
  if (img.pixels.size() != img.height * img.width * 3) throw std::invalid_argument("write_png: pixel count mismatch");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < img.height; ++r)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + r * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Blue-to-red ramp used for heat maps; v in [0,1].
inline std::array<double, 3> heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const double r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
  const double g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
  const double b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
  return {r, g, b};
}

/// Grayscale image with a min-max scaled heat map alpha-blended on top and
/// one-pixel box outlines drawn in white.
inline RgbImage render_overlay(const Grid& image, const Grid& attention, const std::vector<BBox>& boxes,
                               double alpha = 0.45) {
  if (image.rows != attention.rows || image.cols != attention.cols)
    throw ShapeError("render_overlay: image and attention extents differ");
  RgbImage out{image.rows, image.cols, std::vector<std::uint8_t>(image.values.size() * 3)};
  const double lo = attention.min(), hi = attention.max();
  for (std::size_t i = 0; i < image.values.size(); ++i) {
    const double a = hi > lo ? (attention.values[i] - lo) / (hi - lo) : 0.0;
    const auto heat = heat_color(a);
    const double base = std::clamp(image.values[i], 0.0, 1.0);
    for (int ch = 0; ch < 3; ++ch)
      out.pixels[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(255.0 * ((1.0 - alpha) * base + alpha * heat[ch])));
  }
  auto paint = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= static_cast<int>(out.width) || y >= static_cast<int>(out.height)) return;
    std::uint8_t* px = out.pixels.data() + (static_cast<std::size_t>(y) * out.width + static_cast<std::size_t>(x)) * 3;
    px[0] = px[1] = px[2] = 255;
  };
  for (const auto& b : boxes) {
    for (int x = b.x; x < b.right(); ++x) {
      paint(x, b.y);
      paint(x, b.bottom() - 1);
    }
    for (int y = b.y; y < b.bottom(); ++y) {
      paint(b.x, y);
      paint(b.right() - 1, y);
    }
  }
  return out;
}

}  // namespace msloc
