#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "masseg/errors.hpp"
#include "masseg/image.hpp"
#include "masseg/surf.hpp"

namespace masseg::snake {

struct Pixel {
  int x = 0;
  int y = 0;

  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

struct SnakeParams {
  double alpha = 0.05;   // elasticity
  double beta = 0.01;    // stiffness
  double lambda = 1.0;   // external weight
  double sigma = 1.0;    // smoothing of the energy map, pixels
  int max_iters = 500;
  int stall_window = 5;
  double max_spacing = 12.0;  // 0 disables resampling
  int min_contour_size = 4;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw std::invalid_argument("alpha and beta must be >= 0");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
    if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
    if (stall_window < 1) throw std::invalid_argument("stall_window must be >= 1");
    if (!(max_spacing >= 0.0)) throw std::invalid_argument("max_spacing must be >= 0");
    if (min_contour_size < 3) throw std::invalid_argument("min_contour_size must be >= 3");
  }

  SmoothingParams smoothing() const { return {sigma, lambda}; }
};

struct ExplorerAgent {
  int id = 0;
  Pixel pos;
  int contour_id = 0;

  friend bool operator==(const ExplorerAgent&, const ExplorerAgent&) = default;
};

// Closed snake. The cyclic order of agent_ids is the discrete contour parameter and always
// starts at the smallest id.
struct Contour {
  int id = 0;
  std::vector<int> agent_ids;

  friend bool operator==(const Contour&, const Contour&) = default;
};

enum class EventKind { split, discard, resample, converged };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::split: return "split";
    case EventKind::discard: return "discard";
    case EventKind::resample: return "resample";
    case EventKind::converged: return "converged";
  }
  return "unknown";
}

// contour_ids: split -> parent then surviving children; discard/resample -> the contour
// concerned. agents: agents removed (discard) or inserted (resample).
struct Event {
  int iteration = 0;
  EventKind kind = EventKind::split;
  std::vector<int> contour_ids;
  int agents = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

struct SupervisorState {
  int width = 0;
  int height = 0;
  std::map<int, Contour> contours;
  std::map<int, ExplorerAgent> agents;
  int iteration = 0;
  std::vector<Event> events;
  std::vector<double> energy_history;  // entry 0 is the energy before the first step
  int initial_agent_count = 0;
  int next_agent_id = 0;
  int next_contour_id = 0;
  int stall_count = 0;
  bool converged = false;

  std::vector<Pixel> ring(const Contour& c) const {
    std::vector<Pixel> pts;
    pts.reserve(c.agent_ids.size());
    for (int id : c.agent_ids) pts.push_back(agents.at(id).pos);
    return pts;
  }

  bool in_bounds(Pixel p) const noexcept {
    return p.x >= 0 && p.y >= 0 && p.x < width && p.y < height;
  }

  friend bool operator==(const SupervisorState&, const SupervisorState&) = default;
};

inline void canonicalize(Contour& c) {
  auto it = std::min_element(c.agent_ids.begin(), c.agent_ids.end());
  std::rotate(c.agent_ids.begin(), it, c.agent_ids.end());
}

namespace detail {

inline std::int64_t sq(std::int64_t v) { return v * v; }

inline std::int64_t norm2(Pixel a) { return sq(a.x) + sq(a.y); }

inline Pixel diff(Pixel a, Pixel b) { return {a.x - b.x, a.y - b.y}; }

inline Pixel second_diff(Pixel prev, Pixel cur, Pixel next) {
  return {next.x - 2 * cur.x + prev.x, next.y - 2 * cur.y + prev.y};
}

// Integer sums of the squared first and second cyclic differences.
struct InternalSums {
  std::int64_t stretch = 0;
  std::int64_t bend = 0;
};

inline InternalSums internal_sums(std::span<const Pixel> v) {
  InternalSums s;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Pixel prev = v[(i + n - 1) % n];
    const Pixel next = v[(i + 1) % n];
    s.stretch += norm2(diff(next, v[i]));
    s.bend += norm2(second_diff(prev, v[i], next));
  }
  return s;
}

inline double weigh(InternalSums s, double alpha, double beta) {
  return 0.5 * alpha * static_cast<double>(s.stretch) + 0.5 * beta * static_cast<double>(s.bend);
}

}  // namespace detail

// sum_i (alpha/2)|v[i+1]-v[i]|^2 + (beta/2)|v[i+1]-2v[i]+v[i-1]|^2, indices cyclic.
inline double internal_energy(std::span<const Pixel> ring, double alpha, double beta) {
  if (ring.empty()) return 0.0;
  return detail::weigh(detail::internal_sums(ring), alpha, beta);
}

inline double external_energy(std::span<const Pixel> ring, const ScalarField& e) {
  double acc = 0.0;
  for (Pixel p : ring) acc += e(p.x, p.y);
  return acc;
}

inline double contour_energy(const SupervisorState& s, const Contour& c, const ScalarField& e,
                             const SnakeParams& p) {
  const auto ring = s.ring(c);
  return internal_energy(ring, p.alpha, p.beta) + external_energy(ring, e);
}

inline double total_energy(const SupervisorState& s, const ScalarField& e, const SnakeParams& p) {
  double acc = 0.0;
  for (const auto& [id, c] : s.contours) acc += contour_energy(s, c, e, p);
  return acc;
}

// Candidate offsets in tie-break order: stay, N, NE, E, SE, S, SW, W, NW (y grows downward).
inline constexpr std::array<Pixel, 9> kMoves{{{0, 0},
                                              {0, -1},
                                              {1, -1},
                                              {1, 0},
                                              {1, 1},
                                              {0, 1},
                                              {-1, 1},
                                              {-1, 0},
                                              {-1, -1}}};

// The part of the contour energy that depends on the agent at cyclic index i when it sits at q:
// its two incident stretch terms, the three bend terms centred at i-1, i, i+1, and e(q).
inline double local_energy(std::span<const Pixel> ring, std::size_t i, Pixel q,
                           const ScalarField& e, double alpha, double beta) {
  const std::size_t n = ring.size();
  const Pixel p2 = ring[(i + n - 2) % n];
  const Pixel p1 = ring[(i + n - 1) % n];
  const Pixel n1 = ring[(i + 1) % n];
  const Pixel n2 = ring[(i + 2) % n];
  detail::InternalSums s;
  s.stretch = detail::norm2(detail::diff(q, p1)) + detail::norm2(detail::diff(n1, q));
  s.bend = detail::norm2(detail::second_diff(p2, p1, q)) +
           detail::norm2(detail::second_diff(p1, q, n1)) +
           detail::norm2(detail::second_diff(q, n1, n2));
  return detail::weigh(s, alpha, beta) + e(q.x, q.y);
}

struct Proposal {
  Pixel pos;
  double energy = 0.0;       // local energy at pos
  double stay_energy = 0.0;  // local energy at the current position
};

// Best of the 9 candidate pixels for one agent; the first minimum in scan order wins.
inline Proposal propose(std::span<const Pixel> ring, std::size_t i, const ScalarField& e,
                        const SnakeParams& p) {
  Proposal best{ring[i], 0.0, 0.0};
  bool first = true;
  for (const Pixel m : kMoves) {
    const Pixel q{ring[i].x + m.x, ring[i].y + m.y};
    if (!e.contains(q.x, q.y)) continue;
    const double en = local_energy(ring, i, q, e, p.alpha, p.beta);
    if (first) {
      best = {q, en, en};
      first = false;
    } else if (en < best.energy) {
      best.pos = q;
      best.energy = en;
    }
  }
  return best;
}

inline Pixel propose_move(const SupervisorState& s, int agent_id, const ScalarField& e,
                          const SnakeParams& p) {
  const ExplorerAgent& a = s.agents.at(agent_id);
  const Contour& c = s.contours.at(a.contour_id);
  const auto ring = s.ring(c);
  const auto it = std::find(c.agent_ids.begin(), c.agent_ids.end(), agent_id);
  return propose(ring, static_cast<std::size_t>(it - c.agent_ids.begin()), e, p).pos;
}

// Eight seed points become one contour ordered by angle about their centroid.
inline SupervisorState init_agents(std::span<const surf::KeyPoint> points, int width, int height,
                                   int min_size) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("image bounds must be positive");
  std::vector<Pixel> pos;
  for (const auto& kp : points) {
    Pixel q{std::clamp(static_cast<int>(std::lround(kp.x)), 0, width - 1),
            std::clamp(static_cast<int>(std::lround(kp.y)), 0, height - 1)};
    // Nudge duplicates by one pixel, alternating x and y, until free.
    bool along_x = true;
    for (int attempt = 0; std::find(pos.begin(), pos.end(), q) != pos.end() && attempt < 64;
         ++attempt) {
      if (along_x) {
        q.x = q.x + 1 < width ? q.x + 1 : q.x - 1;
      } else {
        q.y = q.y + 1 < height ? q.y + 1 : q.y - 1;
      }
      q.x = std::clamp(q.x, 0, width - 1);
      q.y = std::clamp(q.y, 0, height - 1);
      along_x = !along_x;
    }
    if (std::find(pos.begin(), pos.end(), q) != pos.end()) continue;
    pos.push_back(q);
  }
  if (static_cast<int>(pos.size()) < min_size) {
    throw InitError("only " + std::to_string(pos.size()) + " distinct agent positions, need " +
                    std::to_string(min_size));
  }

  double cx = 0.0, cy = 0.0;
  for (Pixel q : pos) {
    cx += q.x;
    cy += q.y;
  }
  cx /= static_cast<double>(pos.size());
  cy /= static_cast<double>(pos.size());

  struct Keyed {
    double angle, radius;
    int id;
  };
  std::vector<Keyed> order;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const double dx = pos[i].x - cx;
    const double dy = pos[i].y - cy;
    order.push_back({std::atan2(dy, dx), std::hypot(dx, dy), static_cast<int>(i)});
  }
  std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
    if (a.angle != b.angle) return a.angle < b.angle;
    if (a.radius != b.radius) return a.radius < b.radius;
    return a.id < b.id;
  });

  SupervisorState s;
  s.width = width;
  s.height = height;
  Contour c{0, {}};
  for (const Keyed& k : order) {
    s.agents[k.id] = ExplorerAgent{k.id, pos[k.id], 0};
    c.agent_ids.push_back(k.id);
  }
  canonicalize(c);
  s.contours[0] = std::move(c);
  s.initial_agent_count = static_cast<int>(pos.size());
  s.next_agent_id = static_cast<int>(pos.size());
  s.next_contour_id = 1;
  return s;
}

namespace detail {

inline void remove_contour(SupervisorState& s, int contour_id) {
  for (int id : s.contours.at(contour_id).agent_ids) s.agents.erase(id);
  s.contours.erase(contour_id);
}

inline int add_contour(SupervisorState& s, std::vector<int> ids) {
  Contour c{s.next_contour_id++, std::move(ids)};
  canonicalize(c);
  for (int id : c.agent_ids) s.agents.at(id).contour_id = c.id;
  const int cid = c.id;
  s.contours.emplace(cid, std::move(c));
  return cid;
}

}  // namespace detail

// Resolves a same-pixel collision between cyclic indices i < j of one contour. Non-adjacent
// collisions cut the cycle into [i, j) and [j, i); arcs below min_size are discarded.
// Adjacent collisions drop the later-id agent instead. Returns the surviving contour ids.
inline std::vector<int> split_contour(SupervisorState& s, int contour_id, std::size_t i,
                                      std::size_t j, int min_size) {
  if (i > j) std::swap(i, j);
  const std::vector<int> ids = s.contours.at(contour_id).agent_ids;
  const std::size_t n = ids.size();
  if (j >= n || i == j) throw std::invalid_argument("collision indices out of range");

  const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
  if (adjacent) {
    const int victim = std::max(ids[i], ids[j]);
    Contour& c = s.contours.at(contour_id);
    c.agent_ids.erase(std::find(c.agent_ids.begin(), c.agent_ids.end(), victim));
    s.agents.erase(victim);
    canonicalize(c);
    s.events.push_back({s.iteration, EventKind::discard, {contour_id}, 1});
    if (static_cast<int>(c.agent_ids.size()) < min_size) {
      const int lost = static_cast<int>(c.agent_ids.size());
      detail::remove_contour(s, contour_id);
      s.events.push_back({s.iteration, EventKind::discard, {contour_id}, lost});
      return {};
    }
    return {contour_id};
  }

  std::vector<int> first(ids.begin() + static_cast<std::ptrdiff_t>(i),
                         ids.begin() + static_cast<std::ptrdiff_t>(j));
  std::vector<int> second(ids.begin() + static_cast<std::ptrdiff_t>(j), ids.end());
  second.insert(second.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(i));

  s.contours.erase(contour_id);
  Event split{s.iteration, EventKind::split, {contour_id}, 0};
  std::vector<Event> discards;
  std::vector<int> survivors;
  for (auto* arc : {&first, &second}) {
    if (static_cast<int>(arc->size()) < min_size) {
      for (int id : *arc) s.agents.erase(id);
      discards.push_back({s.iteration, EventKind::discard, {contour_id},
                          static_cast<int>(arc->size())});
    } else {
      survivors.push_back(detail::add_contour(s, std::move(*arc)));
    }
  }
  split.contour_ids.insert(split.contour_ids.end(), survivors.begin(), survivors.end());
  s.events.push_back(std::move(split));
  s.events.insert(s.events.end(), discards.begin(), discards.end());
  return survivors;
}

// Applies split_contour until no contour holds two agents on one pixel. Pairs are taken in
// ascending contour id, then ascending (i, j).
inline void resolve_collisions(SupervisorState& s, int min_size) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [cid, c] : s.contours) {
      const auto ring = s.ring(c);
      std::optional<std::pair<std::size_t, std::size_t>> hit;
      for (std::size_t i = 0; i < ring.size() && !hit; ++i) {
        for (std::size_t j = i + 1; j < ring.size(); ++j) {
          if (ring[i] == ring[j]) {
            hit = std::pair{i, j};
            break;
          }
        }
      }
      if (hit) {
        split_contour(s, cid, hit->first, hit->second, min_size);
        changed = true;
        break;
      }
    }
  }
  // Contours can also fall below the minimum from outside (e.g. clamping when warm-starting).
  std::vector<int> small;
  for (const auto& [cid, c] : s.contours) {
    if (static_cast<int>(c.agent_ids.size()) < min_size) small.push_back(cid);
  }
  for (int cid : small) {
    const int lost = static_cast<int>(s.contours.at(cid).agent_ids.size());
    detail::remove_contour(s, cid);
    s.events.push_back({s.iteration, EventKind::discard, {cid}, lost});
  }
}

// Inserts rounded-midpoint agents on edges longer than max_spacing until none remain or the
// run holds 4x its initial agent count. Returns the number of agents inserted.
inline int resample_contour(SupervisorState& s, int contour_id, double max_spacing) {
  if (max_spacing <= 0.0) return 0;
  const int cap = 4 * s.initial_agent_count;
  Contour& c = s.contours.at(contour_id);
  int inserted = 0;
  bool again = true;
  while (again && static_cast<int>(s.agents.size()) < cap) {
    again = false;
    std::vector<int> next;
    next.reserve(c.agent_ids.size() * 2);
    const std::size_t n = c.agent_ids.size();
    for (std::size_t k = 0; k < n; ++k) {
      const int a = c.agent_ids[k];
      const int b = c.agent_ids[(k + 1) % n];
      next.push_back(a);
      const Pixel pa = s.agents.at(a).pos;
      const Pixel pb = s.agents.at(b).pos;
      const double len = std::hypot(pb.x - pa.x, pb.y - pa.y);
      if (len <= max_spacing || static_cast<int>(s.agents.size()) >= cap) continue;
      const Pixel mid{static_cast<int>(std::lround((pa.x + pb.x) / 2.0)),
                      static_cast<int>(std::lround((pa.y + pb.y) / 2.0))};
      if (mid == pa || mid == pb) continue;
      const int id = s.next_agent_id++;
      s.agents[id] = ExplorerAgent{id, mid, contour_id};
      next.push_back(id);
      ++inserted;
      again = true;
    }
    c.agent_ids = std::move(next);
  }
  canonicalize(c);
  if (inserted > 0) {
    s.events.push_back({s.iteration, EventKind::resample, {contour_id}, inserted});
  }
  return inserted;
}

struct StepReport {
  int moves = 0;
  std::size_t first_event = 0;  // index into state.events of this step's first event
};

// One Gauss-Seidel sweep in ascending agent id, then collision handling and resampling.
inline StepReport step(SupervisorState& s, const ScalarField& e, const SnakeParams& p) {
  StepReport rep;
  rep.first_event = s.events.size();
  std::vector<int> order;
  order.reserve(s.agents.size());
  for (const auto& [id, a] : s.agents) order.push_back(id);

  for (int id : order) {
    ExplorerAgent& a = s.agents.at(id);
    const Contour& c = s.contours.at(a.contour_id);
    const auto ring = s.ring(c);
    const auto idx = static_cast<std::size_t>(
        std::find(c.agent_ids.begin(), c.agent_ids.end(), id) - c.agent_ids.begin());
    const Proposal prop = propose(ring, idx, e, p);
    // Local energy differs from the total by terms independent of this agent, so
    // comparing local energies is the total-energy acceptance test.
    if (prop.pos != a.pos && prop.energy <= prop.stay_energy) {
      a.pos = prop.pos;
      ++rep.moves;
    }
  }

  ++s.iteration;
  resolve_collisions(s, p.min_contour_size);
  if (p.max_spacing > 0.0) {
    std::vector<int> ids;
    for (const auto& [cid, c] : s.contours) ids.push_back(cid);
    for (int cid : ids) resample_contour(s, cid, p.max_spacing);
  }
  s.energy_history.push_back(total_energy(s, e, p));

  const bool structural = s.events.size() > rep.first_event;
  s.stall_count = (rep.moves == 0 && !structural) ? s.stall_count + 1 : 0;
  if (s.stall_count >= p.stall_window || s.iteration >= p.max_iters || s.contours.empty()) {
    s.converged = true;
    std::vector<int> ids;
    for (const auto& [cid, c] : s.contours) ids.push_back(cid);
    s.events.push_back({s.iteration, EventKind::converged, std::move(ids), 0});
  }
  return rep;
}

struct ContourRecord {
  int id = 0;
  std::vector<int> agent_ids;
  std::vector<Pixel> points;

  friend bool operator==(const ContourRecord&, const ContourRecord&) = default;
};

struct SegmentationResult {
  SupervisorState state;
  double final_external_energy = 0.0;
  bool low_confidence = false;

  int iterations() const { return state.iteration; }
  const std::vector<Event>& events() const { return state.events; }
  const std::vector<double>& energy_history() const { return state.energy_history; }
  double final_energy() const {
    return state.energy_history.empty() ? 0.0 : state.energy_history.back();
  }
  std::size_t agent_count() const { return state.agents.size(); }

  std::vector<ContourRecord> contours() const {
    std::vector<ContourRecord> out;
    for (const auto& [cid, c] : state.contours) out.push_back({cid, c.agent_ids, state.ring(c)});
    return out;
  }

  std::vector<Pixel> all_points() const {
    std::vector<Pixel> out;
    for (const auto& [cid, c] : state.contours) {
      for (int id : c.agent_ids) out.push_back(state.agents.at(id).pos);
    }
    return out;
  }

  int count(EventKind k) const {
    return static_cast<int>(std::count_if(state.events.begin(), state.events.end(),
                                          [k](const Event& ev) { return ev.kind == k; }));
  }

  friend bool operator==(const SegmentationResult&, const SegmentationResult&) = default;
};

// Clears per-run bookkeeping; contours, agents and id counters carry over.
inline void reset_run(SupervisorState& s) {
  s.iteration = 0;
  s.events.clear();
  s.energy_history.clear();
  s.stall_count = 0;
  s.converged = false;
}

// Iterates step() from the given state until convergence.
inline SegmentationResult evolve(SupervisorState s, const ScalarField& e, const SnakeParams& p) {
  p.validate();
  if (e.kind() != FieldKind::external_energy) {
    throw std::invalid_argument("evolve needs an external_energy field");
  }
  if (e.width() != s.width || e.height() != s.height) {
    throw std::invalid_argument("energy map size does not match the supervisor state");
  }
  if (s.energy_history.empty()) s.energy_history.push_back(total_energy(s, e, p));
  while (!s.converged) step(s, e, p);

  SegmentationResult r;
  double ext = 0.0;
  for (const auto& [cid, c] : s.contours) ext += external_energy(s.ring(c), e);
  r.final_external_energy = ext;
  r.low_confidence = ext > -0.1 * p.lambda * static_cast<double>(s.agents.size());
  r.state = std::move(s);
  return r;
}

inline SegmentationResult run_segmentation(const Image& img, std::span<const surf::KeyPoint> seeds,
                                           const SnakeParams& p) {
  p.validate();
  const ScalarField e = external_energy_map(img, p.smoothing());
  return evolve(init_agents(seeds, img.width(), img.height(), p.min_contour_size), e, p);
}

}  // namespace masseg::snake
