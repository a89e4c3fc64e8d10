#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "masseg/errors.hpp"

namespace masseg {

inline constexpr int kMinImageSide = 3;

// Grayscale raster, row-major, intensities in [0,1].
class Image {
 public:
  Image() = default;

  Image(int width, int height, std::vector<double> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (width < kMinImageSide || height < kMinImageSide) {
      throw SizeError("image is " + std::to_string(width) + "x" + std::to_string(height) +
                      ", both sides must be at least " + std::to_string(kMinImageSide));
    }
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
      throw std::invalid_argument("image data length does not match width*height");
    }
    for (double v : data_) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image intensity outside [0,1]");
    }
  }

  static Image filled(int width, int height, double value) {
    return Image(width, height,
                 std::vector<double>(static_cast<std::size_t>(width) * height, value));
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return data_.empty(); }
  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  double operator()(int x, int y) const { return data_[index(x, y)]; }

  // Edge replication outside the raster.
  double clamped(int x, int y) const {
    return data_[index(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1))];
  }

  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

enum class FieldKind { gradient_magnitude, external_energy };

// Per-pixel map derived from an image. The sign of the values is fixed by the kind.
class ScalarField {
 public:
  ScalarField() = default;

  ScalarField(int width, int height, FieldKind kind, std::vector<double> data)
      : width_(width), height_(height), kind_(kind), data_(std::move(data)) {
    if (width <= 0 || height <= 0 ||
        data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
      throw std::invalid_argument("scalar field dimensions do not match its data");
    }
    for (double v : data_) {
      const bool ok = kind == FieldKind::gradient_magnitude ? v >= 0.0 : v <= 0.0;
      if (!ok || std::isnan(v)) throw std::invalid_argument("scalar field value violates its kind");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  FieldKind kind() const noexcept { return kind_; }
  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }
  double operator()(int x, int y) const {
    return data_[static_cast<std::size_t>(y) * width_ + static_cast<std::size_t>(x)];
  }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const ScalarField&, const ScalarField&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  FieldKind kind_ = FieldKind::gradient_magnitude;
  std::vector<double> data_;
};

struct SmoothingParams {
  double sigma = 1.0;   // pixels
  double lambda = 1.0;  // external energy weight

  void validate() const {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be >= 0");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be > 0");
  }
};

// Normalized 1-D Gaussian, radius ceil(3 sigma). Index radius holds the center tap.
inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * static_cast<double>(i)) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& w : k) w /= sum;
  return k;
}

namespace detail {

// One separable pass. Each output is clamped to the range of the samples it mixes, which
// keeps constant windows exact in floating point.
template <bool Horizontal>
std::vector<double> convolve_pass(std::span<const double> src, int width, int height,
                                  std::span<const double> kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> out(src.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      double lo = 1e300;
      double hi = -1e300;
      for (int k = -radius; k <= radius; ++k) {
        const int sx = Horizontal ? std::clamp(x + k, 0, width - 1) : x;
        const int sy = Horizontal ? y : std::clamp(y + k, 0, height - 1);
        const double v = src[static_cast<std::size_t>(sy) * width + sx];
        acc += kernel[k + radius] * v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      out[static_cast<std::size_t>(y) * width + x] = std::clamp(acc, lo, hi);
    }
  }
  return out;
}

}  // namespace detail

inline Image gaussian_smooth(const Image& img, double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
  if (sigma == 0.0) return img;
  const auto kernel = gaussian_kernel(sigma);
  auto tmp = detail::convolve_pass<true>(img.data(), img.width(), img.height(), kernel);
  auto out = detail::convolve_pass<false>(tmp, img.width(), img.height(), kernel);
  return Image(img.width(), img.height(), std::move(out));
}

// Central differences with edge replication; value is the Euclidean norm of (gx, gy).
inline ScalarField gradient_magnitude(const Image& img) {
  const int w = img.width();
  const int h = img.height();
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (img.clamped(x + 1, y) - img.clamped(x - 1, y)) / 2.0;
      const double gy = (img.clamped(x, y + 1) - img.clamped(x, y - 1)) / 2.0;
      out[static_cast<std::size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return ScalarField(w, h, FieldKind::gradient_magnitude, std::move(out));
}

// -lambda * m^2 / max(m)^2 where m is the gradient magnitude of the smoothed frame.
// A flat frame gives an all-zero map.
inline ScalarField external_energy_map(const Image& img, const SmoothingParams& p) {
  p.validate();
  const ScalarField mag = gradient_magnitude(gaussian_smooth(img, p.sigma));
  const double max_m = *std::max_element(mag.data().begin(), mag.data().end());
  std::vector<double> out(mag.data().size(), 0.0);
  if (max_m > 0.0) {
    const double max_sq = max_m * max_m;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double m = mag.data()[i];
      out[i] = -p.lambda * ((m * m) / max_sq);
    }
  }
  return ScalarField(img.width(), img.height(), FieldKind::external_energy, std::move(out));
}

}  // namespace masseg
