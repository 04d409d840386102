#pragma once

// Batch-sampled roadmap planner with informed resampling, random path
// shortcutting, and a path follower that turns a path into per-step
// navigation actions.
//
// Each batch adds uniformly drawn free samples (plus a few goal-biased ones)
// to a roadmap whose edges join samples within the connection radius, then
// runs Dijkstra from start to goal. Once a solution of cost c exists, later
// batches sample only the prolate spheroid {x : |x-start| + |x-goal| <= c},
// the only region that can still shorten the path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <queue>
#include <vector>

#include "planrl/env.hpp"
#include "planrl/error.hpp"
#include "planrl/rng.hpp"

namespace planrl::planning {

using env::Vec3;
using env::World;

struct PlannerConfig {
  int samples_per_batch = 150;
  int batches = 4;
  double goal_bias = 0.05;
  double connection_radius = 0.3;
  double goal_tolerance = 0.02;    // eps_wp
  double resolution = 0.005;       // delta_col
  double clearance = 0.0;          // obstacle inflation used while planning
  int shortcut_iterations = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (samples_per_batch <= 0 || batches <= 0 || connection_radius <= 0 || goal_tolerance <= 0 || resolution <= 0 ||
        goal_bias < 0 || goal_bias > 1 || clearance < 0 || shortcut_iterations < 0)
      throw Error(ErrorCode::invalid_argument, "planner configuration values must be positive");
  }
};

struct Path {
  std::vector<Vec3> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
  double length() const {
    double l = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) l += (points[i] - points[i - 1]).norm();
    return l;
  }
};

struct PlanResult {
  Path path;
  std::vector<double> batch_costs;  // incumbent cost after each batch (inf before the first solution)
  Vec3 goal_used = Vec3::Zero();    // goal after projection out of obstacles
};

namespace detail {

inline std::vector<env::Box> inflate(const World& world, double clearance) {
  std::vector<env::Box> out;
  for (const auto& b : world.obstacles) out.push_back(b.inflated(clearance));
  return out;
}

inline bool inside_any(const Vec3& p, const std::vector<env::Box>& boxes) {
  for (const auto& b : boxes)
    if (b.contains(p)) return true;
  return false;
}

/// Exact test of a closed segment against a closed box (slab method).
inline bool segment_hits_box(const Vec3& p0, const Vec3& p1, const env::Box& b) {
  double t0 = 0.0, t1 = 1.0;
  const Vec3 d = p1 - p0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-300) {
      if (p0[a] < b.lo[a] || p0[a] > b.hi[a]) return false;
      continue;
    }
    double lo = (b.lo[a] - p0[a]) / d[a];
    double hi = (b.hi[a] - p0[a]) / d[a];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
    if (t0 > t1) return false;
  }
  return true;
}

inline bool segment_blocked(const Vec3& p0, const Vec3& p1, const std::vector<env::Box>& boxes) {
  for (const auto& b : boxes)
    if (segment_hits_box(p0, p1, b)) return true;
  return false;
}

// Nearest exit through a face of the offending box, nudged outward; repeated
// a few times in case the exit lands in a neighbouring box.
inline Vec3 project_out(Vec3 p, const World& world, const std::vector<env::Box>& boxes) {
  constexpr double kNudge = 1e-6;
  for (int round = 0; round < 8; ++round) {
    const env::Box* hit = nullptr;
    for (const auto& b : boxes)
      if (b.contains(p)) {
        hit = &b;
        break;
      }
    if (!hit) return p;
    double best = std::numeric_limits<double>::infinity();
    Vec3 best_p = p;
    for (int axis = 0; axis < 3; ++axis) {
      for (int side = 0; side < 2; ++side) {
        Vec3 q = p;
        q[axis] = side == 0 ? hit->lo[axis] - kNudge : hit->hi[axis] + kNudge;
        if (q[axis] < world.workspace.lo[axis] || q[axis] > world.workspace.hi[axis]) continue;
        const double d = std::abs(q[axis] - p[axis]);
        if (d < best) {
          best = d;
          best_p = q;
        }
      }
    }
    if (!std::isfinite(best)) break;
    p = best_p;
  }
  if (inside_any(p, boxes)) throw Error(ErrorCode::plan_failed, "goal cannot be projected out of obstacles");
  return p;
}

// Uniform sample in the prolate spheroid with foci a, b and transverse
// diameter c.
inline Vec3 sample_informed(const Vec3& a, const Vec3& b, double c, Rng& rng) {
  const double dmin = (b - a).norm();
  const double r1 = 0.5 * c;
  const double r2 = 0.5 * std::sqrt(std::max(c * c - dmin * dmin, 0.0));
  Vec3 ball;
  do {
    ball = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
  } while (ball.squaredNorm() > 1.0);
  Vec3 e1 = dmin > 1e-12 ? Vec3((b - a) / dmin) : Vec3::UnitX();
  Vec3 helper = std::abs(e1.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 e2 = e1.cross(helper).normalized();
  Vec3 e3 = e1.cross(e2);
  return 0.5 * (a + b) + e1 * (r1 * ball.x()) + e2 * (r2 * ball.y()) + e3 * (r2 * ball.z());
}

struct Roadmap {
  std::vector<Vec3> nodes;
  std::vector<std::vector<std::pair<std::size_t, double>>> edges;
};

inline std::vector<std::size_t> dijkstra(const Roadmap& g, std::size_t from, std::size_t to, double& cost) {
  const std::size_t n = g.nodes.size();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> prev(n, n);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  dist[from] = 0.0;
  open.emplace(0.0, from);
  while (!open.empty()) {
    const auto [d, u] = open.top();
    open.pop();
    if (d > dist[u]) continue;
    if (u == to) break;
    for (const auto& [v, w] : g.edges[u]) {
      const double nd = d + w;
      if (nd < dist[v]) {
        dist[v] = nd;
        prev[v] = u;
        open.emplace(nd, v);
      }
    }
  }
  cost = dist[to];
  if (!std::isfinite(cost)) return {};
  std::vector<std::size_t> chain;
  for (std::size_t v = to; v != n; v = prev[v]) chain.push_back(v);
  std::reverse(chain.begin(), chain.end());
  return chain;
}

inline Vec3 point_at(const Path& path, const std::vector<double>& cumulative, double s, std::size_t& segment) {
  segment = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), s) - cumulative.begin());
  segment = std::clamp<std::size_t>(segment, 1, path.size() - 1);
  const double seg_len = cumulative[segment] - cumulative[segment - 1];
  const double t = seg_len > 0 ? (s - cumulative[segment - 1]) / seg_len : 0.0;
  return path.points[segment - 1] + std::clamp(t, 0.0, 1.0) * (path.points[segment] - path.points[segment - 1]);
}

}  // namespace detail

inline bool path_is_valid(const Path& path, const World& world, double resolution) {
  for (std::size_t i = 1; i < path.size(); ++i)
    if (env::segment_collides(path.points[i - 1], path.points[i], world, resolution)) return false;
  return !path.empty();
}

/// Randomly replaces sub-chains between two arclength positions by straight
/// segments when collision-free, then greedily skips vertices. Never longer
/// than the input; endpoints are kept.
inline Path shortcut(const Path& input, const std::vector<env::Box>& obstacles, int iterations, std::uint64_t seed) {
  Path path = input;
  if (path.size() < 3) return path;
  Rng rng = make_stream(seed, stream::planner + 1);
  for (int it = 0; it < iterations && path.size() >= 3; ++it) {
    std::vector<double> cum(path.size(), 0.0);
    for (std::size_t i = 1; i < path.size(); ++i) cum[i] = cum[i - 1] + (path.points[i] - path.points[i - 1]).norm();
    const double total = cum.back();
    if (total <= 0.0) break;
    double s1 = uniform(rng, 0.0, total);
    double s2 = uniform(rng, 0.0, total);
    if (s1 > s2) std::swap(s1, s2);
    std::size_t seg1 = 0, seg2 = 0;
    const Vec3 q1 = detail::point_at(path, cum, s1, seg1);
    const Vec3 q2 = detail::point_at(path, cum, s2, seg2);
    if (seg1 == seg2) continue;  // same segment: already straight
    const double old_len = (q1 - path.points[seg1]).norm() + (cum[seg2 - 1] - cum[seg1]) + (path.points[seg2 - 1] - q2).norm();
    if ((q2 - q1).norm() >= old_len - 1e-12) continue;
    if (detail::segment_blocked(q1, q2, obstacles)) continue;
    std::vector<Vec3> next(path.points.begin(), path.points.begin() + static_cast<std::ptrdiff_t>(seg1));
    next.push_back(q1);
    next.push_back(q2);
    next.insert(next.end(), path.points.begin() + static_cast<std::ptrdiff_t>(seg2), path.points.end());
    // Drop duplicate consecutive points created at vertices.
    std::vector<Vec3> dedup;
    for (const auto& p : next)
      if (dedup.empty() || (dedup.back() - p).norm() > 1e-12) dedup.push_back(p);
    path.points = std::move(dedup);
  }
  // Greedy pass: from each kept vertex jump to the furthest visible one.
  Path greedy;
  std::size_t i = 0;
  greedy.points.push_back(path.points[0]);
  while (i + 1 < path.size()) {
    std::size_t j = path.size() - 1;
    while (j > i + 1 && detail::segment_blocked(path.points[i], path.points[j], obstacles)) --j;
    greedy.points.push_back(path.points[j]);
    i = j;
  }
  return greedy.length() <= path.length() ? greedy : path;
}

inline Path shortcut(const Path& input, const World& world, int iterations, std::uint64_t seed) {
  return shortcut(input, world.obstacles, iterations, seed);
}

/// Collision-free path from start to goal. Straight-line queries return the
/// two-point path; otherwise the shortest roadmap path found over all
/// batches, shortcut. A goal inside an obstacle is first projected to the
/// nearest point outside. Throws ErrorCode::plan_failed when no path is
/// found within the sample budget.
inline PlanResult plan_detailed(const Vec3& start, const Vec3& goal_in, const World& world, const PlannerConfig& cfg) {
  cfg.validate();
  const auto real = world.obstacles;
  const auto inflated = detail::inflate(world, cfg.clearance);
  if (detail::inside_any(start, real)) throw Error(ErrorCode::invalid_argument, "start is inside an obstacle");
  PlanResult result;
  const Vec3 goal = detail::project_out(world.workspace.clamp(goal_in), world, real);
  result.goal_used = goal;

  if ((goal - start).norm() <= 1e-12) {
    result.path.points = {start};
    result.batch_costs.assign(1, 0.0);
    return result;
  }
  if (!detail::segment_blocked(start, goal, real)) {
    result.path.points = {start, goal};
    result.batch_costs.assign(1, (goal - start).norm());
    return result;
  }

  // Start and goal may sit inside the inflated boxes (e.g. right next to a
  // wall); edges touching them are checked against the real obstacles.
  detail::Roadmap g;
  g.nodes = {start, goal};
  g.edges.resize(2);
  auto edge_ok = [&](std::size_t a, std::size_t b) {
    const bool endpoint = a < 2 || b < 2;
    return !detail::segment_blocked(g.nodes[a], g.nodes[b], endpoint ? real : inflated);
  };

  Rng rng = make_stream(cfg.seed, stream::planner);
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> best_chain;
  const double r2 = cfg.connection_radius * cfg.connection_radius;

  for (int batch = 0; batch < cfg.batches; ++batch) {
    const std::size_t first_new = g.nodes.size();
    int added = 0, attempts = 0;
    while (added < cfg.samples_per_batch && attempts < 50 * cfg.samples_per_batch) {
      ++attempts;
      Vec3 q;
      if (uniform(rng, 0.0, 1.0) < cfg.goal_bias) {
        q = goal + Vec3(normal(rng, 0, 0.5 * cfg.connection_radius), normal(rng, 0, 0.5 * cfg.connection_radius),
                        normal(rng, 0, 0.5 * cfg.connection_radius));
      } else if (std::isfinite(best)) {
        q = detail::sample_informed(start, goal, best, rng);
      } else {
        q = env::sample_in(world.workspace, rng);
      }
      if (!world.workspace.contains(q) || detail::inside_any(q, inflated)) continue;
      if (std::isfinite(best) && (q - start).norm() + (q - goal).norm() > best) continue;
      g.nodes.push_back(q);
      g.edges.emplace_back();
      ++added;
    }
    for (std::size_t a = first_new; a < g.nodes.size(); ++a) {
      for (std::size_t b = 0; b < a; ++b) {
        const double d2 = (g.nodes[a] - g.nodes[b]).squaredNorm();
        if (d2 > r2 || !edge_ok(a, b)) continue;
        const double w = std::sqrt(d2);
        g.edges[a].emplace_back(b, w);
        g.edges[b].emplace_back(a, w);
      }
    }
    double cost = 0.0;
    auto chain = detail::dijkstra(g, 0, 1, cost);
    if (!chain.empty() && cost < best) {
      best = cost;
      best_chain = std::move(chain);
    }
    result.batch_costs.push_back(best);
  }
  if (best_chain.empty()) throw Error(ErrorCode::plan_failed, "no path found within the sample budget");

  Path raw;
  for (auto i : best_chain) raw.points.push_back(g.nodes[i]);
  Path sc = shortcut(raw, real, cfg.shortcut_iterations, cfg.seed);
  result.path = sc.length() <= raw.length() && path_is_valid(sc, world, cfg.resolution) ? sc : raw;
  return result;
}

inline Path plan(const Vec3& start, const Vec3& goal, const World& world, const PlannerConfig& cfg) {
  return plan_detailed(start, goal, world, cfg).path;
}

// ---------------------------------------------------------------------------
// Path following

inline double distance_to_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

inline double distance_to_path(const Vec3& p, const Path& path) {
  if (path.size() == 1) return (p - path.points[0]).norm();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < path.size(); ++i)
    best = std::min(best, distance_to_segment(p, path.points[i - 1], path.points[i]));
  return best;
}

/// Proportional step toward the furthest path vertex reachable in a straight
/// collision-free line. The translation keeps its direction when scaled into
/// the action box. The gripper stays open unless an object is held.
inline env::Action nav_action(const env::State& s, const Path& path, const World& world) {
  if (path.empty()) throw Error(ErrorCode::invalid_argument, "nav_action needs a nonempty path");
  auto toward = [&](const Vec3& target) {
    const Vec3 d = (target - s.gripper) / world.step_limit();
    const double m = d.cwiseAbs().maxCoeff();
    env::Action a;
    a.head<3>() = m > 1.0 ? Vec3(d / m) : d;
    a[3] = s.held ? -1.0 : 1.0;
    return a;
  };
  // The executed step is itself a segment the simulator checks, so it must
  // be clear too.
  auto step_clear = [&](const env::Action& a) {
    const Vec3 next = world.workspace.clamp(s.gripper + a.head<3>() * world.step_limit());
    return !env::segment_collides(s.gripper, next, world);
  };
  for (std::size_t k = path.size(); k-- > 0;) {
    if (k > 0 && detail::segment_blocked(s.gripper, path.points[k], world.obstacles)) continue;
    const env::Action a = toward(path.points[k]);
    if (k == 0 || step_clear(a)) return a;
  }
  return toward(path.points.front());
}

/// Optional debug dump: one "x,y,z" row per vertex.
inline void write_path_csv(const std::filesystem::path& file, const Path& path) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::io, "cannot write path dump: " + file.string());
  os << "x,y,z\n";
  os.precision(17);
  for (const auto& p : path.points) os << p.x() << ',' << p.y() << ',' << p.z() << '\n';
}

}  // namespace planrl::planning
