#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "masseg/errors.hpp"
#include "masseg/image.hpp"
#include "masseg/integral_image.hpp"
#include "masseg/snake.hpp"
#include "masseg/surf.hpp"

namespace masseg::tracker {

inline constexpr double kSearchRadius = 30.0;

struct Offset {
  double dx = 0.0;
  double dy = 0.0;

  friend bool operator==(const Offset&, const Offset&) = default;
};

struct TrackState {
  int frame_index = 0;
  std::array<surf::KeyPoint, 8> tracked_points{};
  snake::SegmentationResult prev_result;
  Offset global_offset;
  int matched_points = 0;                     // how many of the 8 matched in the last frame
  std::vector<surf::KeyPoint> frame_keypoints;  // everything detected in the last frame
};

struct Propagation {
  std::array<surf::KeyPoint, 8> points{};
  Offset offset;
  int matched = 0;
  std::vector<surf::KeyPoint> detected;
};

// Detection plus orientation and descriptor for one frame.
inline std::vector<surf::KeyPoint> detect_and_describe(const Image& frame,
                                                       const surf::DetectorParams& dp) {
  const IntegralImage ii(frame);
  auto kps = surf::detect_keypoints(ii, dp);
  surf::describe(ii, kps);
  return kps;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::pair<TrackState, snake::SegmentationResult> init_tracking(
    const Image& frame0, const surf::DetectorParams& dp, const snake::SnakeParams& sp) {
  dp.validate();
  sp.validate();
  TrackState st;
  st.frame_keypoints = detect_and_describe(frame0, dp);
  const auto sel = surf::select_extremity_points(st.frame_keypoints, frame0.width(),
                                                 frame0.height());
  st.tracked_points = sel.points;
  st.matched_points = 8;
  auto result = snake::run_segmentation(frame0, sel.points, sp);
  if (result.state.contours.empty()) {
    throw InitError("segmentation of the first frame left no contour");
  }
  st.prev_result = result;
  return {std::move(st), std::move(result)};
}

// Matches the 8 tracked points into the new frame within the search radius. Matched points
// take the new position and descriptor; the rest move by the median displacement.
inline Propagation propagate_points(const TrackState& st, const Image& frame,
                                    const surf::DetectorParams& dp) {
  dp.validate();
  Propagation out;
  out.detected = detect_and_describe(frame, dp);
  out.points = st.tracked_points;
  const auto matches = surf::match_descriptors(st.tracked_points, out.detected, dp.ratio,
                                               kSearchRadius);
  std::vector<double> dxs, dys;
  std::array<bool, 8> matched{};
  for (const surf::Match& m : matches) {
    const surf::KeyPoint& from = st.tracked_points[m.index_a];
    const surf::KeyPoint& to = out.detected[m.index_b];
    dxs.push_back(to.x - from.x);
    dys.push_back(to.y - from.y);
    out.points[m.index_a] = to;
    matched[m.index_a] = true;
  }
  out.matched = static_cast<int>(matches.size());
  out.offset = {median(dxs), median(dys)};
  for (std::size_t k = 0; k < out.points.size(); ++k) {
    if (matched[k]) continue;
    out.points[k].x += out.offset.dx;
    out.points[k].y += out.offset.dy;
  }
  return out;
}

// Shifts the previous contours by the tracked motion and re-evolves them on the new frame.
inline std::pair<TrackState, snake::SegmentationResult> track_frame(
    const TrackState& st, const Image& frame, const surf::DetectorParams& dp,
    const snake::SnakeParams& sp) {
  sp.validate();
  const Propagation prop = propagate_points(st, frame, dp);
  snake::SupervisorState s = st.prev_result.state;
  if (s.width != frame.width() || s.height != frame.height()) {
    throw Error("frame size changed mid-sequence");
  }
  snake::reset_run(s);
  const int sx = static_cast<int>(std::lround(prop.offset.dx));
  const int sy = static_cast<int>(std::lround(prop.offset.dy));
  for (auto& [id, a] : s.agents) {
    a.pos.x = std::clamp(a.pos.x + sx, 0, s.width - 1);
    a.pos.y = std::clamp(a.pos.y + sy, 0, s.height - 1);
  }
  snake::resolve_collisions(s, sp.min_contour_size);
  if (s.contours.empty()) throw TrackingLost("all contours collapsed after shifting");

  const ScalarField e = external_energy_map(frame, sp.smoothing());
  auto result = snake::evolve(std::move(s), e, sp);
  if (result.state.contours.empty()) throw TrackingLost("all contours were discarded");

  TrackState next;
  next.frame_index = st.frame_index + 1;
  next.tracked_points = prop.points;
  next.prev_result = result;
  next.global_offset = prop.offset;
  next.matched_points = prop.matched;
  next.frame_keypoints = prop.detected;
  return {std::move(next), std::move(result)};
}

}  // namespace masseg::tracker
