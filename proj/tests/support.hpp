#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "masseg/image.hpp"
#include "masseg/snake.hpp"

namespace masseg::fixtures {

struct Blob {
  double cx, cy, sigma, amplitude;
};

// Sum of Gaussian blobs, each moved by (sx, sy), clipped to 1.
inline Image blob_image(int w, int h, std::span<const Blob> blobs, int sx = 0, int sy = 0) {
  std::vector<double> d(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (const Blob& b : blobs) {
        const double dx = x - (b.cx + sx);
        const double dy = y - (b.cy + sy);
        v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      d[static_cast<std::size_t>(y) * w + x] = std::min(v, 1.0);
    }
  }
  return Image(w, h, std::move(d));
}

// Area centroid of a closed polygon; falls back to the vertex mean when the area vanishes.
inline std::array<double, 3> polygon_moments(std::span<const snake::Pixel> pts) {
  double a2 = 0.0, cx = 0.0, cy = 0.0;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = pts[i];
    const auto q = pts[(i + 1) % n];
    const double cross = static_cast<double>(p.x) * q.y - static_cast<double>(q.x) * p.y;
    a2 += cross;
    cx += (p.x + q.x) * cross;
    cy += (p.y + q.y) * cross;
  }
  return {a2 / 2.0, cx, cy};
}

// Centroid of the region enclosed by all contours (area-weighted).
inline std::pair<double, double> contour_centroid(const snake::SegmentationResult& r) {
  double area = 0.0, mx = 0.0, my = 0.0;
  for (const auto& c : r.contours()) {
    const auto [a, cx, cy] = polygon_moments(c.points);
    area += a;
    mx += cx;
    my += cy;
  }
  if (std::abs(area) < 1e-9) {
    const auto pts = r.all_points();
    double sx = 0.0, sy = 0.0;
    for (const auto& p : pts) {
      sx += p.x;
      sy += p.y;
    }
    return {sx / pts.size(), sy / pts.size()};
  }
  return {mx / (6.0 * area), my / (6.0 * area)};
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("masseg_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace masseg::fixtures
