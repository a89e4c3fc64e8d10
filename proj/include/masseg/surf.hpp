#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "masseg/errors.hpp"
#include "masseg/integral_image.hpp"

namespace masseg::surf {

inline constexpr std::size_t kDescriptorSize = 64;
using Descriptor = std::array<double, kDescriptorSize>;

struct KeyPoint {
  double x = 0.0;
  double y = 0.0;
  double scale = 1.2;
  double response = 0.0;
  int laplacian_sign = 1;
  double orientation = 0.0;     // radians in [0, 2pi)
  bool near_border = false;     // orientation sampling disk left the image; orientation fixed at 0
  Descriptor descriptor{};

  friend bool operator==(const KeyPoint&, const KeyPoint&) = default;
};

struct DetectorParams {
  double hessian_threshold = 0.0002;
  int octaves = 3;
  int init_step = 1;
  double ratio = 0.7;

  void validate() const {
    if (!(hessian_threshold > 0.0)) throw std::invalid_argument("hessian_threshold must be > 0");
    if (octaves < 1) throw std::invalid_argument("octaves must be >= 1");
    if (init_step < 1) throw std::invalid_argument("init_step must be >= 1");
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("ratio must be in (0,1]");
  }
};

struct Match {
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  double distance = 0.0;

  friend bool operator==(const Match&, const Match&) = default;
};

// Filter side for octave o (0-based) and interval i (0..3): 9,15,21,27 then 15,27,39,51, ...
constexpr int filter_size(int octave, int interval) {
  return 3 * ((1 << (octave + 1)) * (interval + 1) + 1);
}

// Box-filter Hessian responses at one filter size, sampled every `step` pixels.
struct ResponseLayer {
  int width = 0;
  int height = 0;
  int step = 1;
  int filter = 9;
  std::vector<double> response;
  std::vector<signed char> sign;

  double at(int r, int c) const { return response[static_cast<std::size_t>(r) * width + c]; }
};

// The second-derivative filters are oriented so that a bright blob has positive Dxx and Dyy
// (center lobe weighted +2, side lobes -1). The determinant is unaffected; the Laplacian
// sign is then +1 for bright-on-dark blobs.
inline ResponseLayer build_response_layer(const IntegralImage& ii, int step, int filter) {
  ResponseLayer layer;
  layer.step = step;
  layer.filter = filter;
  layer.width = ii.width() / step;
  layer.height = ii.height() / step;
  layer.response.resize(static_cast<std::size_t>(layer.width) * layer.height);
  layer.sign.resize(layer.response.size());
  const int lobe = filter / 3;
  const int half = (filter - 1) / 2;
  const double inv_area = 1.0 / (static_cast<double>(filter) * filter);
  for (int r = 0; r < layer.height; ++r) {
    for (int c = 0; c < layer.width; ++c) {
      const int y = r * step;
      const int x = c * step;
      const double dxx =
          3.0 * ii.box_sum(x - lobe / 2, y - lobe + 1, x - lobe / 2 + lobe - 1, y + lobe - 1) -
          ii.box_sum(x - half, y - lobe + 1, x + half, y + lobe - 1);
      const double dyy =
          3.0 * ii.box_sum(x - lobe + 1, y - lobe / 2, x + lobe - 1, y - lobe / 2 + lobe - 1) -
          ii.box_sum(x - lobe + 1, y - half, x + lobe - 1, y + half);
      const double dxy = ii.box_sum(x + 1, y - lobe, x + lobe, y - 1) +
                         ii.box_sum(x - lobe, y + 1, x - 1, y + lobe) -
                         ii.box_sum(x - lobe, y - lobe, x - 1, y - 1) -
                         ii.box_sum(x + 1, y + 1, x + lobe, y + lobe);
      const double nxx = dxx * inv_area;
      const double nyy = dyy * inv_area;
      const double nxy = dxy * inv_area;
      const std::size_t idx = static_cast<std::size_t>(r) * layer.width + c;
      layer.response[idx] = nxx * nyy - 0.81 * nxy * nxy;
      layer.sign[idx] = (nxx + nyy) >= 0.0 ? 1 : -1;
    }
  }
  return layer;
}

// Octaves whose largest filter fits in the image.
inline int usable_octaves(int width, int height, int requested) {
  const int side = std::min(width, height);
  int n = 0;
  while (n < requested && filter_size(n, 3) <= side) ++n;
  return n;
}

namespace detail {

// Solves the 3x3 system h * x = b by Cramer's rule. Returns nullopt when singular.
inline std::optional<std::array<double, 3>> solve3(const std::array<std::array<double, 3>, 3>& h,
                                                   const std::array<double, 3>& b) {
  auto det3 = [](const std::array<std::array<double, 3>, 3>& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  const double d = det3(h);
  if (d == 0.0 || !std::isfinite(d)) return std::nullopt;
  std::array<double, 3> x{};
  for (int k = 0; k < 3; ++k) {
    auto m = h;
    for (int row = 0; row < 3; ++row) m[row][k] = b[row];
    x[k] = det3(m) / d;
  }
  return x;
}

// Strict maximum over the 26 neighbours, with exact ties going to the first sample in
// (layer, row, column) order so plateaus from symmetric content still yield one point.
inline bool is_local_max(const ResponseLayer& b, const ResponseLayer& m, const ResponseLayer& t,
                         int r, int c) {
  const double v = m.at(r, c);
  const ResponseLayer* layers[3] = {&b, &m, &t};
  for (int l = 0; l < 3; ++l) {
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if (l == 1 && dr == 0 && dc == 0) continue;
        const double n = layers[l]->at(r + dr, c + dc);
        if (n > v) return false;
        const bool precedes = l < 1 || (l == 1 && (dr < 0 || (dr == 0 && dc < 0)));
        if (n == v && precedes) return false;
      }
    }
  }
  return true;
}

}  // namespace detail

// Fast-Hessian detection. Descriptors and orientations are left unset.
inline std::vector<KeyPoint> detect_keypoints(const IntegralImage& ii, const DetectorParams& p) {
  p.validate();
  std::vector<KeyPoint> out;
  const int octaves = usable_octaves(ii.width(), ii.height(), p.octaves);
  for (int o = 0; o < octaves; ++o) {
    const int step = p.init_step;
    if (ii.width() / step < 3 || ii.height() / step < 3) break;
    std::array<ResponseLayer, 4> layers;
    for (int i = 0; i < 4; ++i) layers[i] = build_response_layer(ii, step, filter_size(o, i));

    for (int mid = 1; mid <= 2; ++mid) {
      const ResponseLayer& b = layers[mid - 1];
      const ResponseLayer& m = layers[mid];
      const ResponseLayer& t = layers[mid + 1];
      const int border = (t.filter + 1) / (2 * step);
      for (int r = border + 1; r < m.height - border; ++r) {
        for (int c = border + 1; c < m.width - border; ++c) {
          const double v = m.at(r, c);
          if (v < p.hessian_threshold) continue;
          if (!detail::is_local_max(b, m, t, r, c)) continue;

          const double dx = (m.at(r, c + 1) - m.at(r, c - 1)) / 2.0;
          const double dy = (m.at(r + 1, c) - m.at(r - 1, c)) / 2.0;
          const double ds = (t.at(r, c) - b.at(r, c)) / 2.0;
          const double dxx = m.at(r, c + 1) + m.at(r, c - 1) - 2.0 * v;
          const double dyy = m.at(r + 1, c) + m.at(r - 1, c) - 2.0 * v;
          const double dss = t.at(r, c) + b.at(r, c) - 2.0 * v;
          const double dxy = (m.at(r + 1, c + 1) - m.at(r + 1, c - 1) - m.at(r - 1, c + 1) +
                              m.at(r - 1, c - 1)) / 4.0;
          const double dxs = (t.at(r, c + 1) - t.at(r, c - 1) - b.at(r, c + 1) +
                              b.at(r, c - 1)) / 4.0;
          const double dys = (t.at(r + 1, c) - t.at(r - 1, c) - b.at(r + 1, c) +
                              b.at(r - 1, c)) / 4.0;
          const auto off = detail::solve3({{{dxx, dxy, dxs}, {dxy, dyy, dys}, {dxs, dys, dss}}},
                                          {-dx, -dy, -ds});
          if (!off) continue;
          // 0.5 is reachable exactly on two-sample plateaus; allow it.
          constexpr double kLimit = 0.5 + 1e-9;
          if (std::abs((*off)[0]) > kLimit || std::abs((*off)[1]) > kLimit ||
              std::abs((*off)[2]) > kLimit) {
            continue;
          }
          KeyPoint kp;
          kp.x = (c + (*off)[0]) * step;
          kp.y = (r + (*off)[1]) * step;
          kp.scale = (1.2 / 9.0) * (m.filter + (*off)[2] * (m.filter - b.filter));
          kp.response = v;
          kp.laplacian_sign = m.sign[static_cast<std::size_t>(r) * m.width + c];
          out.push_back(kp);
        }
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const KeyPoint& a, const KeyPoint& b) {
    if (a.response != b.response) return a.response > b.response;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  // Adjacent octaves overlap in scale, so one blob can peak in both. Keep the stronger.
  std::vector<KeyPoint> kept;
  for (const KeyPoint& kp : out) {
    const bool dup = std::any_of(kept.begin(), kept.end(), [&](const KeyPoint& k) {
      const double lo = std::min(k.scale, kp.scale);
      const double hi = std::max(k.scale, kp.scale);
      return k.laplacian_sign == kp.laplacian_sign && hi <= 1.5 * lo &&
             std::hypot(k.x - kp.x, k.y - kp.y) <= 0.5 * lo;
    });
    if (!dup) kept.push_back(kp);
  }
  return kept;
}

namespace detail {

inline constexpr double kNumericalZero = 1e-12;

// Haar wavelets of even side `side` centred on (x, y): right-minus-left (x) and
// bottom-minus-top (y) mean intensities over clamped half-windows.
inline double haar_x(const IntegralImage& ii, int x, int y, int side) {
  const int h = side / 2;
  const long long na = ii.box_area(x, y - h, x + h - 1, y + h - 1);
  const long long nb = ii.box_area(x - h, y - h, x - 1, y + h - 1);
  if (na == 0 || nb == 0) return 0.0;
  const double v = ii.box_sum(x, y - h, x + h - 1, y + h - 1) / static_cast<double>(na) -
                   ii.box_sum(x - h, y - h, x - 1, y + h - 1) / static_cast<double>(nb);
  return std::abs(v) < kNumericalZero ? 0.0 : v;
}

inline double haar_y(const IntegralImage& ii, int x, int y, int side) {
  const int h = side / 2;
  const long long na = ii.box_area(x - h, y, x + h - 1, y + h - 1);
  const long long nb = ii.box_area(x - h, y - h, x + h - 1, y - 1);
  if (na == 0 || nb == 0) return 0.0;
  const double v = ii.box_sum(x - h, y, x + h - 1, y + h - 1) / static_cast<double>(na) -
                   ii.box_sum(x - h, y - h, x + h - 1, y - 1) / static_cast<double>(nb);
  return std::abs(v) < kNumericalZero ? 0.0 : v;
}

inline int even_side(double length) {
  return std::max(2, 2 * static_cast<int>(std::lround(length / 2.0)));
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  if (a >= two_pi) a = 0.0;
  return a;
}

}  // namespace detail

struct Orientation {
  double angle = 0.0;
  bool near_border = false;
};

// Dominant gradient direction from Gaussian-weighted Haar responses on a radius-6s disk,
// picked by a pi/3 sliding window stepped by pi/36.
inline Orientation assign_orientation(const IntegralImage& ii, const KeyPoint& kp) {
  const double s = kp.scale;
  const double margin = 6.0 * s;
  if (kp.x - margin < 0.0 || kp.y - margin < 0.0 || kp.x + margin > ii.width() - 1 ||
      kp.y + margin > ii.height() - 1) {
    return {0.0, true};
  }
  const int side = detail::even_side(4.0 * s);
  struct Sample {
    double angle, dx, dy;
  };
  std::vector<Sample> samples;
  samples.reserve(113);
  for (int i = -6; i <= 6; ++i) {
    for (int j = -6; j <= 6; ++j) {
      if (i * i + j * j >= 36) continue;
      const int px = static_cast<int>(std::lround(kp.x + i * s));
      const int py = static_cast<int>(std::lround(kp.y + j * s));
      // sigma = 2s, expressed in sample units
      const double g = std::exp(-(i * i + j * j) / 8.0);
      const double rx = g * detail::haar_x(ii, px, py, side);
      const double ry = g * detail::haar_y(ii, px, py, side);
      if (rx == 0.0 && ry == 0.0) continue;
      samples.push_back({detail::wrap_angle(std::atan2(ry, rx)), rx, ry});
    }
  }
  constexpr double window = std::numbers::pi / 3.0;
  constexpr double stride = std::numbers::pi / 36.0;
  double best = -1.0;
  double best_dx = 0.0;
  double best_dy = 0.0;
  for (int k = 0; k < 72; ++k) {
    const double start = k * stride;
    double sx = 0.0;
    double sy = 0.0;
    for (const Sample& smp : samples) {
      double d = smp.angle - start;
      if (d < 0.0) d += 2.0 * std::numbers::pi;
      if (d < window) {
        sx += smp.dx;
        sy += smp.dy;
      }
    }
    const double mag = sx * sx + sy * sy;
    if (mag > best) {
      best = mag;
      best_dx = sx;
      best_dy = sy;
    }
  }
  if (best <= 0.0) return {0.0, false};
  return {detail::wrap_angle(std::atan2(best_dy, best_dx)), false};
}

// 64-component descriptor: 20s window along the orientation, 4x4 subregions of 5x5 samples,
// (sum dx, sum dy, sum |dx|, sum |dy|) per subregion, unit-normalized.
inline Descriptor compute_descriptor(const IntegralImage& ii, const KeyPoint& kp) {
  const double s = kp.scale;
  const double co = std::cos(kp.orientation);
  const double si = std::sin(kp.orientation);
  const int side = detail::even_side(2.0 * s);
  const double sigma = 3.3 * s;
  Descriptor d{};
  for (int sy = 0; sy < 4; ++sy) {
    for (int sx = 0; sx < 4; ++sx) {
      double sum_dx = 0.0, sum_dy = 0.0, abs_dx = 0.0, abs_dy = 0.0;
      for (int l = 0; l < 5; ++l) {
        for (int k = 0; k < 5; ++k) {
          const double u = (-10.0 + 5.0 * sx + k + 0.5) * s;
          const double v = (-10.0 + 5.0 * sy + l + 0.5) * s;
          const int px = static_cast<int>(std::lround(kp.x + u * co - v * si));
          const int py = static_cast<int>(std::lround(kp.y + u * si + v * co));
          const double rx = detail::haar_x(ii, px, py, side);
          const double ry = detail::haar_y(ii, px, py, side);
          const double g = std::exp(-(u * u + v * v) / (2.0 * sigma * sigma));
          const double du = g * (rx * co + ry * si);
          const double dv = g * (-rx * si + ry * co);
          sum_dx += du;
          sum_dy += dv;
          abs_dx += std::abs(du);
          abs_dy += std::abs(dv);
        }
      }
      const std::size_t base = static_cast<std::size_t>(sy * 4 + sx) * 4;
      d[base + 0] = sum_dx;
      d[base + 1] = sum_dy;
      d[base + 2] = abs_dx;
      d[base + 3] = abs_dy;
    }
  }
  double norm = 0.0;
  for (double v : d) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& v : d) v /= norm;
  }
  return d;
}

// Orientation plus descriptor for every keypoint.
inline void describe(const IntegralImage& ii, std::span<KeyPoint> kps) {
  for (KeyPoint& kp : kps) {
    const Orientation o = assign_orientation(ii, kp);
    kp.orientation = o.angle;
    kp.near_border = o.near_border;
    kp.descriptor = compute_descriptor(ii, kp);
  }
}

inline double descriptor_distance(const Descriptor& a, const Descriptor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < kDescriptorSize; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline constexpr double kLoneCandidateDistance = 0.5;

// Sign-gated nearest-neighbour matching with a ratio test. Candidates in b can be restricted
// to within `radius` pixels of the keypoint in a. When several keypoints of a claim the same
// keypoint of b, only the closest claimant is kept.
inline std::vector<Match> match_descriptors(std::span<const KeyPoint> a, std::span<const KeyPoint> b,
                                            double ratio,
                                            double radius = std::numeric_limits<double>::infinity()) {
  std::vector<Match> claims;
  if (a.empty() || b.empty()) return claims;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = std::numeric_limits<double>::infinity();
    std::size_t best = 0;
    std::size_t candidates = 0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (a[i].laplacian_sign != b[j].laplacian_sign) continue;
      if (std::isfinite(radius) && std::hypot(a[i].x - b[j].x, a[i].y - b[j].y) > radius) continue;
      ++candidates;
      const double d = descriptor_distance(a[i].descriptor, b[j].descriptor);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = j;
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (candidates == 0) continue;
    const bool keep = candidates == 1 ? d1 < kLoneCandidateDistance
                                      : (d2 > 0.0 && d1 / d2 < ratio);
    if (keep) claims.push_back({i, best, d1});
  }
  std::stable_sort(claims.begin(), claims.end(), [](const Match& x, const Match& y) {
    if (x.distance != y.distance) return x.distance < y.distance;
    return x.index_a < y.index_a;
  });
  std::vector<Match> out;
  std::vector<bool> taken(b.size(), false);
  for (const Match& m : claims) {
    if (taken[m.index_b]) continue;
    taken[m.index_b] = true;
    out.push_back(m);
  }
  return out;
}

enum class Anchor { TL, TM, TR, MR, BR, BM, BL, ML };

struct ExtremitySelection {
  std::array<KeyPoint, 8> points{};
  std::array<bool, 8> duplicate{};  // anchor reused an already-claimed keypoint
  std::array<std::size_t, 8> source_index{};
};

inline std::array<std::array<double, 2>, 8> extremity_anchors(int width, int height) {
  const double r = width - 1.0;
  const double b = height - 1.0;
  return {{{0.0, 0.0}, {r / 2.0, 0.0}, {r, 0.0}, {r, b / 2.0},
           {r, b}, {r / 2.0, b}, {0.0, b}, {0.0, b / 2.0}}};
}

// Each anchor (corners and edge midpoints, clockwise from top-left) greedily claims its
// nearest unclaimed keypoint; ties go to the higher response, then the lower index.
inline ExtremitySelection select_extremity_points(std::span<const KeyPoint> kps, int width,
                                                  int height) {
  if (kps.empty()) {
    throw InitError("no interest points detected; lower hessian_threshold");
  }
  const auto anchors = extremity_anchors(width, height);
  ExtremitySelection sel;
  std::vector<bool> claimed(kps.size(), false);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const bool reuse = std::all_of(claimed.begin(), claimed.end(), [](bool c) { return c; });
    std::size_t best = kps.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < kps.size(); ++k) {
      if (!reuse && claimed[k]) continue;
      const double d = std::hypot(kps[k].x - anchors[a][0], kps[k].y - anchors[a][1]);
      if (d < best_d || (d == best_d && kps[k].response > kps[best].response)) {
        best = k;
        best_d = d;
      }
    }
    claimed[best] = true;
    sel.points[a] = kps[best];
    sel.duplicate[a] = reuse;
    sel.source_index[a] = best;
  }
  return sel;
}

}  // namespace masseg::surf
