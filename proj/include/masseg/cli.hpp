#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "masseg/errors.hpp"
#include "masseg/image.hpp"
#include "masseg/netpbm.hpp"
#include "masseg/snake.hpp"
#include "masseg/surf.hpp"
#include "masseg/tracker.hpp"

namespace masseg::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kIoOrConfig = 1, kInitFailed = 2, kTrackingLost = 3 };

struct RunConfig {
  fs::path input_dir;
  std::string frame_glob = "frame_*.pgm";
  fs::path output_dir = "out";
  surf::DetectorParams detector;
  snake::SnakeParams snake;
  bool emit_overlays = false;
  bool dump_keypoints = false;

  void validate() const {
    if (input_dir.empty()) throw ConfigError("input_dir is required");
    if (output_dir.empty()) throw ConfigError("output_dir is required");
    try {
      detector.validate();
      snake.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

// Shortest decimal that round-trips.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline double parse_real(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError("invalid number for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return v;
}

inline int parse_int(std::string_view key, std::string_view text) {
  int v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid integer for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return v;
}

inline bool parse_flag(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("invalid flag for " + std::string(key) + ": '" + std::string(text) + "'");
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Every config key with its current value, in a fixed order. Used for the metrics header.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  return {
      {"input_dir", c.input_dir.string()},
      {"frame_glob", c.frame_glob},
      {"output_dir", c.output_dir.string()},
      {"hessian_threshold", format_number(c.detector.hessian_threshold)},
      {"octaves", std::to_string(c.detector.octaves)},
      {"init_step", std::to_string(c.detector.init_step)},
      {"ratio", format_number(c.detector.ratio)},
      {"alpha", format_number(c.snake.alpha)},
      {"beta", format_number(c.snake.beta)},
      {"lambda", format_number(c.snake.lambda)},
      {"sigma", format_number(c.snake.sigma)},
      {"max_iters", std::to_string(c.snake.max_iters)},
      {"stall_window", std::to_string(c.snake.stall_window)},
      {"max_spacing", format_number(c.snake.max_spacing)},
      {"min_contour_size", std::to_string(c.snake.min_contour_size)},
      {"emit_overlays", flag(c.emit_overlays)},
      {"dump_keypoints", flag(c.dump_keypoints)},
  };
}

// Flat key=value text with '#' comments. Relative paths resolve against base_dir.
inline RunConfig parse_config(std::string_view text, const fs::path& base_dir = {}) {
  RunConfig c;
  using Setter = std::function<void(std::string_view, std::string_view)>;
  const std::map<std::string, Setter, std::less<>> setters{
      {"input_dir", [&](auto, auto v) { c.input_dir = fs::path(std::string(v)); }},
      {"frame_glob", [&](auto, auto v) { c.frame_glob = std::string(v); }},
      {"output_dir", [&](auto, auto v) { c.output_dir = fs::path(std::string(v)); }},
      {"hessian_threshold", [&](auto k, auto v) { c.detector.hessian_threshold = detail::parse_real(k, v); }},
      {"octaves", [&](auto k, auto v) { c.detector.octaves = detail::parse_int(k, v); }},
      {"init_step", [&](auto k, auto v) { c.detector.init_step = detail::parse_int(k, v); }},
      {"ratio", [&](auto k, auto v) { c.detector.ratio = detail::parse_real(k, v); }},
      {"alpha", [&](auto k, auto v) { c.snake.alpha = detail::parse_real(k, v); }},
      {"beta", [&](auto k, auto v) { c.snake.beta = detail::parse_real(k, v); }},
      {"lambda", [&](auto k, auto v) { c.snake.lambda = detail::parse_real(k, v); }},
      {"sigma", [&](auto k, auto v) { c.snake.sigma = detail::parse_real(k, v); }},
      {"max_iters", [&](auto k, auto v) { c.snake.max_iters = detail::parse_int(k, v); }},
      {"stall_window", [&](auto k, auto v) { c.snake.stall_window = detail::parse_int(k, v); }},
      {"max_spacing", [&](auto k, auto v) { c.snake.max_spacing = detail::parse_real(k, v); }},
      {"min_contour_size", [&](auto k, auto v) { c.snake.min_contour_size = detail::parse_int(k, v); }},
      {"emit_overlays", [&](auto k, auto v) { c.emit_overlays = detail::parse_flag(k, v); }},
      {"dump_keypoints", [&](auto k, auto v) { c.dump_keypoints = detail::parse_flag(k, v); }},
  };

  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = line;
    if (const auto hash = sv.find('#'); hash != std::string_view::npos) sv = sv.substr(0, hash);
    sv = detail::trim(sv);
    if (sv.empty()) continue;
    const auto eq = sv.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = detail::trim(sv.substr(0, eq));
    const auto value = detail::trim(sv.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + std::string(key) + "'");
    }
    it->second(key, value);
  }
  if (!base_dir.empty()) {
    if (!c.input_dir.empty() && c.input_dir.is_relative()) c.input_dir = base_dir / c.input_dir;
    if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
  }
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

// Matching frame files, lexicographic by filename.
inline std::vector<fs::path> list_frames(const fs::path& dir, const std::string& glob) {
  std::vector<fs::path> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (fnmatch(glob.c_str(), name.c_str(), 0) == 0) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

inline std::string frame_name(std::string_view prefix, int index, std::string_view ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return std::string(prefix) + buf + std::string(ext);
}

// --- output writers -------------------------------------------------------------------

inline std::vector<std::string> contour_records(int frame, const snake::SegmentationResult& r) {
  using nlohmann::json;
  std::vector<std::string> lines;
  for (const auto& c : r.contours()) {
    json pts = json::array();
    for (const auto& p : c.points) pts.push_back({p.x, p.y});
    lines.push_back(json{{"type", "contour"},
                         {"frame", frame},
                         {"contour_id", c.id},
                         {"agent_count", c.points.size()},
                         {"points", pts}}
                        .dump());
  }
  json events = json::array();
  for (const auto& e : r.events()) {
    events.push_back({{"iteration", e.iteration},
                      {"kind", snake::to_string(e.kind)},
                      {"contour_ids", e.contour_ids},
                      {"agents", e.agents}});
  }
  lines.push_back(json{{"type", "events"}, {"frame", frame}, {"events", events}}.dump());
  lines.push_back(
      json{{"type", "energy"}, {"frame", frame}, {"energy_history", r.energy_history()}}.dump());
  return lines;
}

inline const char* kMetricsColumns =
    "frame,iterations,final_energy,contours,agents,splits,discards,matched_points,offset_dx,"
    "offset_dy,low_confidence";

inline std::string metrics_row(int frame, const snake::SegmentationResult& r,
                               const tracker::TrackState& st) {
  std::string row = std::to_string(frame) + "," + std::to_string(r.iterations()) + "," +
                    format_number(r.final_energy()) + "," +
                    std::to_string(r.state.contours.size()) + "," +
                    std::to_string(r.agent_count()) + "," +
                    std::to_string(r.count(snake::EventKind::split)) + "," +
                    std::to_string(r.count(snake::EventKind::discard)) + "," +
                    std::to_string(st.matched_points) + "," + format_number(st.global_offset.dx) +
                    "," + format_number(st.global_offset.dy) + "," +
                    (r.low_confidence ? "1" : "0");
  return row;
}

inline std::string keypoint_dump(std::span<const surf::KeyPoint> kps) {
  std::string out;
  char buf[64];
  auto put = [&](double v, bool last) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out += buf;
    out += last ? '\n' : ' ';
  };
  for (const auto& kp : kps) {
    put(kp.x, false);
    put(kp.y, false);
    put(kp.scale, false);
    put(kp.response, false);
    put(kp.laplacian_sign, false);
    put(kp.orientation, false);
    for (std::size_t i = 0; i < kp.descriptor.size(); ++i) {
      put(kp.descriptor[i], i + 1 == kp.descriptor.size());
    }
  }
  return out;
}

// Pixels on the closed polyline through the contour's agents.
inline std::vector<snake::Pixel> rasterize_contour(std::span<const snake::Pixel> pts) {
  std::vector<snake::Pixel> out;
  const std::size_t n = pts.size();
  for (std::size_t k = 0; k < n; ++k) {
    int x0 = pts[k].x, y0 = pts[k].y;
    const int x1 = pts[(k + 1) % n].x, y1 = pts[(k + 1) % n].y;
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      out.push_back({x0, y0});
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  return out;
}

// Frame as gray RGB with contour pixels pure red.
inline std::string render_overlay(const Image& frame, const snake::SegmentationResult& r) {
  std::vector<Rgb> px(frame.data().size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const auto v = to_byte(frame.data()[i]);
    px[i] = {v, v, v};
  }
  for (const auto& c : r.contours()) {
    for (const auto& p : rasterize_contour(c.points)) {
      if (frame.contains(p.x, p.y)) {
        px[static_cast<std::size_t>(p.y) * frame.width() + p.x] = {255, 0, 0};
      }
    }
  }
  return encode_ppm(frame.width(), frame.height(), px);
}

// Runs segmentation on frame 0 and tracking on the rest, writing contours.jsonl, metrics.csv
// and the optional overlays/ and keypoints/ directories under output_dir.
inline int run(const RunConfig& config, std::ostream& err) {
  try {
    config.validate();
    const auto frames = list_frames(config.input_dir, config.frame_glob);
    if (frames.empty()) {
      err << "error: no frames matched " << config.frame_glob << " in "
          << config.input_dir.string() << "\n";
      return kIoOrConfig;
    }
    fs::create_directories(config.output_dir);
    if (config.emit_overlays) fs::create_directories(config.output_dir / "overlays");
    if (config.dump_keypoints) fs::create_directories(config.output_dir / "keypoints");

    std::ofstream contours(config.output_dir / "contours.jsonl", std::ios::trunc);
    std::ofstream metrics(config.output_dir / "metrics.csv", std::ios::trunc);
    if (!contours || !metrics) throw Error("cannot write to " + config.output_dir.string());
    for (const auto& [k, v] : config_entries(config)) metrics << "# " << k << "=" << v << "\n";
    metrics << kMetricsColumns << "\n";
    metrics.flush();

    tracker::TrackState state;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const Image frame = load_frame(frames[f]);
      snake::SegmentationResult result;
      if (f == 0) {
        std::tie(state, result) =
            tracker::init_tracking(frame, config.detector, config.snake);
      } else {
        std::tie(state, result) =
            tracker::track_frame(state, frame, config.detector, config.snake);
      }
      const int idx = static_cast<int>(f);
      for (const auto& line : contour_records(idx, result)) contours << line << "\n";
      contours.flush();
      metrics << metrics_row(idx, result, state) << "\n";
      metrics.flush();
      if (config.emit_overlays) {
        write_file(config.output_dir / "overlays" / frame_name("frame_", idx, ".ppm"),
                   render_overlay(frame, result));
      }
      if (config.dump_keypoints) {
        write_file(config.output_dir / "keypoints" / frame_name("frame_", idx, ".txt"),
                   keypoint_dump(state.frame_keypoints));
      }
      if (!contours || !metrics) throw Error("write failed under " + config.output_dir.string());
    }
    return kOk;
  } catch (const InitError& e) {
    err << "error: initialization failed: " << e.what() << "\n";
    return kInitFailed;
  } catch (const TrackingLost& e) {
    err << "error: tracking lost: " << e.what() << "\n";
    return kTrackingLost;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoOrConfig;
  }
}

// --- synthetic sequences ------------------------------------------------------------------

enum class SynthKind { disk, square, translate_square };

inline SynthKind parse_synth_kind(std::string_view s) {
  if (s == "disk") return SynthKind::disk;
  if (s == "square") return SynthKind::square;
  if (s == "translate_square") return SynthKind::translate_square;
  throw ConfigError("unknown synth kind '" + std::string(s) + "'");
}

struct SquareGeometry {
  double left = 0.0;
  double top = 0.0;
  double side = 0.0;

  double center_x() const { return left + side / 2.0 - 0.5; }  // in pixel-centre coordinates
  double center_y() const { return top + side / 2.0 - 0.5; }
};

// Square placement for frame `index`; the moving square is centred over its whole path.
inline SquareGeometry square_geometry(SynthKind kind, int width, int height, int frames,
                                      double speed, int index) {
  SquareGeometry g;
  g.side = std::round(0.4 * std::min(width, height));
  g.top = std::floor((height - g.side) / 2.0);
  if (kind == SynthKind::translate_square) {
    const double travel = speed * std::max(frames - 1, 0);
    g.left = std::max(0.0, std::floor((width - g.side - travel) / 2.0)) + speed * index;
  } else {
    g.left = std::floor((width - g.side) / 2.0);
  }
  return g;
}

inline double disk_radius(int width, int height) { return 0.3 * std::min(width, height); }

inline Image synth_frame(SynthKind kind, int width, int height, int frames, double speed,
                         int index) {
  std::vector<double> d(static_cast<std::size_t>(width) * height);
  if (kind == SynthKind::disk) {
    const double r = disk_radius(width, height);
    const double cx = (width - 1) / 2.0;
    const double cy = (height - 1) / 2.0;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dist = std::hypot(x - cx, y - cy);
        d[static_cast<std::size_t>(y) * width + x] = std::clamp(r + 0.5 - dist, 0.0, 1.0);
      }
    }
  } else {
    const SquareGeometry g = square_geometry(kind, width, height, frames, speed, index);
    // Exact area coverage of pixel [p, p+1) by the square, per axis.
    auto cover = [](double lo, double hi, int p) {
      return std::clamp(std::min(hi, p + 1.0) - std::max(lo, static_cast<double>(p)), 0.0, 1.0);
    };
    for (int y = 0; y < height; ++y) {
      const double cy = cover(g.top, g.top + g.side, y);
      for (int x = 0; x < width; ++x) {
        d[static_cast<std::size_t>(y) * width + x] = cy * cover(g.left, g.left + g.side, x);
      }
    }
  }
  return Image(width, height, std::move(d));
}

inline int synth(SynthKind kind, int width, int height, int frames, double speed,
                 const fs::path& out_dir, std::ostream& err) {
  try {
    if (width < 32 || height < 32) throw ConfigError("synth dimensions must be at least 32");
    if (frames < 1) throw ConfigError("synth needs at least one frame");
    if (!std::isfinite(speed)) throw ConfigError("speed must be finite");
    fs::create_directories(out_dir);
    for (int f = 0; f < frames; ++f) {
      write_file(out_dir / frame_name("frame_", f, ".pgm"),
                 encode_pgm(synth_frame(kind, width, height, frames, speed, f)));
    }
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoOrConfig;
  }
}

}  // namespace masseg::cli
