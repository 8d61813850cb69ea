#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include "locate/common.hpp"
#include "locate/tensor.hpp"

namespace locate {

// Images are [3, H, W] tensors with values in [0, 1] at load time.
// On-disk format is binary PPM (P6, 8-bit); good enough for the synthetic
// fixtures and keeps the loader dependency-free.

inline Tensor load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open image '" + path + "'");
  std::string magic;
  f >> magic;
  if (magic != "P6") throw DataError("'" + path + "': not a P6 PPM image");
  auto next_int = [&]() -> int {
    // skip whitespace and '#' comments between header fields
    int c = f.get();
    while (c == '#' || std::isspace(c)) {
      if (c == '#')
        while (c != '\n' && c != EOF) c = f.get();
      c = f.get();
    }
    int v = 0;
    bool any = false;
    while (std::isdigit(c)) {
      v = v * 10 + (c - '0');
      any = true;
      c = f.get();
    }
    if (!any) throw DataError("'" + path + "': malformed PPM header");
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255)
    throw DataError("'" + path + "': unsupported PPM geometry");
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw DataError("'" + path + "': truncated pixel data");
  Tensor img({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img(c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return img;
}

inline void save_ppm(const std::string& path, const Tensor& img) {
  require(img.rank() == 3 && img.dim(0) == 3, "save_ppm expects [3, H, W]");
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(img(c, y, x), 0.0, 1.0);
        raw[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw DataError("short write to '" + path + "'");
}

// Bilinear sampling with the half-pixel-center convention
// (src = (dst + 0.5) * scale - 0.5, edges clamped).
inline Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  require(img.rank() == 3, "resize_bilinear expects [C, H, W]");
  const std::size_t C = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (h == out_h && w == out_w) return img;
  Tensor out({C, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const double top = img(c, y0, x0) * (1.0 - wx) + img(c, y0, x1) * wx;
        const double bot = img(c, y1, x0) * (1.0 - wx) + img(c, y1, x1) * wx;
        out(c, y, x) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

inline Tensor crop(const Tensor& img, std::size_t top, std::size_t left,
                   std::size_t out_h, std::size_t out_w) {
  require(img.rank() == 3, "crop expects [C, H, W]");
  require(top + out_h <= img.dim(1) && left + out_w <= img.dim(2),
          "crop window out of bounds");
  const std::size_t C = img.dim(0);
  Tensor out({C, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) out(c, y, x) = img(c, top + y, left + x);
  return out;
}

inline Tensor hflip(const Tensor& img) {
  require(img.rank() == 3, "hflip expects [C, H, W]");
  const std::size_t C = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({C, h, w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out(c, y, x) = img(c, y, w - 1 - x);
  return out;
}

inline Tensor standardize(const Tensor& img, const std::array<double, 3>& mean,
                          const std::array<double, 3>& stddev) {
  require(img.rank() == 3 && img.dim(0) == 3, "standardize expects [3, H, W]");
  Tensor out = img;
  for (std::size_t c = 0; c < 3; ++c) {
    require(stddev[c] > 0.0, "standardization stddev must be positive");
    for (std::size_t y = 0; y < img.dim(1); ++y)
      for (std::size_t x = 0; x < img.dim(2); ++x)
        out(c, y, x) = (img(c, y, x) - mean[c]) / stddev[c];
  }
  return out;
}

}  // namespace locate
