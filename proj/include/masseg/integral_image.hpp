#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "masseg/image.hpp"

namespace masseg {

namespace detail {

// Unevaluated sum hi + lo (double-double). The summed-area table keeps the rounding error
// of every prefix so that differences of large prefixes stay accurate for small boxes.
struct Compensated {
  double hi = 0.0;
  double lo = 0.0;

  double value() const noexcept { return hi + lo; }
};

inline Compensated two_sum(double a, double b) noexcept {
  const double s = a + b;
  const double bb = s - a;
  const double err = (a - (s - bb)) + (b - bb);
  return {s, err};
}

inline Compensated add(Compensated a, Compensated b) noexcept {
  Compensated s = two_sum(a.hi, b.hi);
  const Compensated t = two_sum(a.lo, b.lo);
  s.lo += t.hi;
  s = two_sum(s.hi, s.lo);
  s.lo += t.lo;
  return two_sum(s.hi, s.lo);
}

inline Compensated negate(Compensated a) noexcept { return {-a.hi, -a.lo}; }

}  // namespace detail

// Summed-area table: entry (x,y) is the sum of source intensities over rows 0..y, cols 0..x.
class IntegralImage {
 public:
  IntegralImage() = default;

  explicit IntegralImage(const Image& img)
      : width_(img.width()), height_(img.height()),
        table_(static_cast<std::size_t>(width_) * height_) {
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        detail::Compensated acc{img(x, y), 0.0};
        if (x > 0) acc = detail::add(acc, entry(x - 1, y));
        if (y > 0) acc = detail::add(acc, entry(x, y - 1));
        if (x > 0 && y > 0) acc = detail::add(acc, detail::negate(entry(x - 1, y - 1)));
        table_[static_cast<std::size_t>(y) * width_ + x] = acc;
      }
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  double operator()(int x, int y) const { return entry(x, y).value(); }

  // Inclusive rectangle, clamped to the raster. Fully outside gives 0.
  double box_sum(int x0, int y0, int x1, int y1) const {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, width_ - 1);
    y1 = std::min(y1, height_ - 1);
    if (x0 > x1 || y0 > y1) return 0.0;
    detail::Compensated s = entry(x1, y1);
    if (x0 > 0) s = detail::add(s, detail::negate(entry(x0 - 1, y1)));
    if (y0 > 0) s = detail::add(s, detail::negate(entry(x1, y0 - 1)));
    if (x0 > 0 && y0 > 0) s = detail::add(s, entry(x0 - 1, y0 - 1));
    return s.value();
  }

  // Clamped rectangle area in pixels.
  long long box_area(int x0, int y0, int x1, int y1) const noexcept {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, width_ - 1);
    y1 = std::min(y1, height_ - 1);
    if (x0 > x1 || y0 > y1) return 0;
    return static_cast<long long>(x1 - x0 + 1) * (y1 - y0 + 1);
  }

 private:
  const detail::Compensated& entry(int x, int y) const {
    return table_[static_cast<std::size_t>(y) * width_ + x];
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<detail::Compensated> table_;
};

inline IntegralImage integral_image(const Image& img) { return IntegralImage(img); }

inline double box_sum(const IntegralImage& ii, int x0, int y0, int x1, int y1) {
  return ii.box_sum(x0, y0, x1, y1);
}

}  // namespace masseg
