#pragma once

// Kinematic tabletop manipulation world: a point gripper with a binary
// magnetic grasp, one cubic object, a goal position and static axis-aligned
// obstacles. Transitions are deterministic; reward is 1 exactly on the
// step that completes the task.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "planrl/error.hpp"
#include "planrl/rng.hpp"

namespace planrl::env {

using Vec3 = Eigen::Vector3d;
using Action = Eigen::Vector4d;

inline constexpr int kActionDim = 4;
inline constexpr int kObservationDim = 17;

enum class TaskId : std::uint8_t { ReachLift = 0, PushToGoal = 1, PickAndPlace = 2 };
enum class Randomization : std::uint8_t { None = 0, ObjectPos = 1, ObjectAndGripper = 2 };

inline std::string_view to_string(TaskId t) {
  switch (t) {
    case TaskId::ReachLift: return "ReachLift";
    case TaskId::PushToGoal: return "PushToGoal";
    case TaskId::PickAndPlace: return "PickAndPlace";
  }
  return "?";
}

inline TaskId parse_task(std::string_view s) {
  if (s == "ReachLift") return TaskId::ReachLift;
  if (s == "PushToGoal") return TaskId::PushToGoal;
  if (s == "PickAndPlace") return TaskId::PickAndPlace;
  throw Error(ErrorCode::invalid_argument, "unknown task: " + std::string(s));
}

inline std::string_view to_string(Randomization r) {
  switch (r) {
    case Randomization::None: return "None";
    case Randomization::ObjectPos: return "ObjectPos";
    case Randomization::ObjectAndGripper: return "ObjectAndGripper";
  }
  return "?";
}

inline Randomization parse_randomization(std::string_view s) {
  if (s == "None") return Randomization::None;
  if (s == "ObjectPos") return Randomization::ObjectPos;
  if (s == "ObjectAndGripper") return Randomization::ObjectAndGripper;
  throw Error(ErrorCode::invalid_argument, "unknown randomization: " + std::string(s));
}

/// Closed axis-aligned box.
struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3 clamp(const Vec3& p) const { return p.cwiseMax(lo).cwiseMin(hi); }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
  bool valid() const { return (lo.array() <= hi.array()).all(); }
  Box inflated(double margin) const { return Box{lo.array() - margin, hi.array() + margin}; }
  bool overlaps(const Box& o) const {
    return (lo.array() <= o.hi.array()).all() && (o.lo.array() <= hi.array()).all();
  }
};

struct World {
  TaskId task = TaskId::ReachLift;
  Box workspace{Vec3::Zero(), Vec3::Ones()};
  std::vector<Box> obstacles;

  double object_half_extent = 0.03;
  double goal_tolerance = 0.04;      // eps_goal
  double grasp_distance = 0.04;      // eps_grasp
  double lift_height = 0.1;          // h_lift
  double contact_distance = 0.05;    // push contact radius
  bool pushable = false;
  double max_step = 0.0;             // delta_max; 0 means 2% of the workspace diagonal
  double collision_resolution = 0.005;
  int horizon = 120;

  Vec3 gripper_start = Vec3::Zero();
  Box gripper_region;
  Vec3 object_start = Vec3::Zero();
  Box object_region;
  Vec3 goal = Vec3::Zero();

  double diagonal() const { return workspace.extent().norm(); }
  double height() const { return workspace.extent().z(); }
  double step_limit() const { return max_step > 0.0 ? max_step : 0.02 * diagonal(); }
  double object_rest_z() const { return object_start.z(); }
  double obstacle_top() const {
    double top = workspace.lo.z();
    for (const auto& b : obstacles) top = std::max(top, b.hi.z());
    return top;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::config, m); };
    if (!workspace.valid() || (workspace.extent().array() <= 0.0).any()) fail("workspace must have positive extent");
    for (const auto& b : obstacles) {
      if (!b.valid()) fail("obstacle with lo > hi");
      if (!workspace.contains(b.lo) || !workspace.contains(b.hi)) fail("obstacle outside workspace");
    }
    if (goal_tolerance <= 0 || grasp_distance <= 0 || lift_height <= 0 || contact_distance <= 0 ||
        object_half_extent <= 0 || collision_resolution <= 0)
      fail("tolerances must be positive");
    if (horizon <= 0) fail("horizon must be positive");
    if (!gripper_region.valid() || !object_region.valid()) fail("randomization region with lo > hi");
    for (const Vec3* p : {&gripper_start, &object_start, &goal})
      if (!workspace.contains(*p)) fail("start or goal outside workspace");
  }
};

inline Box make_box(double x0, double y0, double z0, double x1, double y1, double z1) {
  return Box{Vec3(x0, y0, z0), Vec3(x1, y1, z1)};
}

/// Built-in unit-cube worlds. A low wall separates the gripper's home from
/// the object so that the straight line between them is blocked.
inline World default_world(TaskId task) {
  World w;
  w.task = task;
  switch (task) {
    case TaskId::ReachLift:
      w.obstacles = {make_box(0.42, 0.05, 0.0, 0.50, 0.95, 0.32)};
      w.horizon = 120;
      w.gripper_start = Vec3(0.15, 0.5, 0.40);
      w.gripper_region = make_box(0.05, 0.10, 0.10, 0.35, 0.90, 0.60);
      w.object_start = Vec3(0.72, 0.5, 0.03);
      w.object_region = make_box(0.62, 0.25, 0.03, 0.85, 0.75, 0.03);
      w.goal = Vec3(0.72, 0.5, 0.20);
      break;
    case TaskId::PushToGoal:
      w.obstacles = {make_box(0.22, 0.18, 0.0, 0.30, 0.30, 0.70)};
      w.pushable = true;
      w.goal_tolerance = 0.05;
      w.horizon = 200;
      w.gripper_start = Vec3(0.12, 0.12, 0.35);
      w.gripper_region = make_box(0.05, 0.05, 0.15, 0.20, 0.60, 0.60);
      w.object_start = Vec3(0.45, 0.40, 0.03);
      w.object_region = make_box(0.38, 0.32, 0.03, 0.55, 0.50, 0.03);
      w.goal = Vec3(0.72, 0.70, 0.03);
      break;
    case TaskId::PickAndPlace:
      w.obstacles = {make_box(0.50, 0.05, 0.0, 0.58, 0.95, 0.35), make_box(0.72, 0.42, 0.0, 0.88, 0.58, 0.15)};
      w.goal_tolerance = 0.05;
      w.horizon = 300;
      w.gripper_start = Vec3(0.25, 0.5, 0.45);
      w.gripper_region = make_box(0.05, 0.10, 0.15, 0.45, 0.90, 0.60);
      w.object_start = Vec3(0.25, 0.5, 0.03);
      w.object_region = make_box(0.15, 0.30, 0.03, 0.35, 0.70, 0.03);
      w.goal = Vec3(0.80, 0.50, 0.18);
      break;
  }
  return w;
}

struct State {
  Vec3 gripper = Vec3::Zero();
  double width = 1.0;  // 0 closed, 1 open
  Vec3 object = Vec3::Zero();
  Vec3 goal = Vec3::Zero();
  bool held = false;
  int step = 0;

  friend bool operator==(const State& a, const State& b) {
    return a.gripper == b.gripper && a.width == b.width && a.object == b.object && a.goal == b.goal &&
           a.held == b.held && a.step == b.step;
  }
};

/// Flat feature vector fed to every network: gripper, width, object, goal,
/// held flag, object relative to gripper, goal relative to object.
inline Eigen::VectorXd observe(const State& s) {
  Eigen::VectorXd o(kObservationDim);
  o << s.gripper, s.width, s.object, s.goal, (s.held ? 1.0 : 0.0), s.object - s.gripper, s.goal - s.object;
  return o;
}

inline Action clip_action(const Action& a) { return a.cwiseMax(-1.0).cwiseMin(1.0); }

inline bool point_collides(const Vec3& p, const World& world) {
  for (const auto& b : world.obstacles)
    if (b.contains(p)) return true;
  return false;
}

/// True iff a sample at spacing <= resolution along [p0, p1] (endpoints
/// included) lies inside an obstacle.
inline bool segment_collides(const Vec3& p0, const Vec3& p1, const std::vector<Box>& obstacles, double resolution) {
  const double len = (p1 - p0).norm();
  const auto n = static_cast<long>(std::ceil(len / resolution));
  for (const auto& b : obstacles) {
    // Cheap reject on the segment's bounding box.
    const Vec3 lo = p0.cwiseMin(p1);
    const Vec3 hi = p0.cwiseMax(p1);
    if ((hi.array() < b.lo.array()).any() || (lo.array() > b.hi.array()).any()) continue;
    if (b.contains(p0) || b.contains(p1)) return true;
    for (long i = 1; i < n; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(n);
      if (b.contains(p0 + t * (p1 - p0))) return true;
    }
  }
  return false;
}

inline bool segment_collides(const Vec3& p0, const Vec3& p1, const World& world, double resolution) {
  return segment_collides(p0, p1, world.obstacles, resolution);
}

inline bool segment_collides(const Vec3& p0, const Vec3& p1, const World& world) {
  return segment_collides(p0, p1, world, world.collision_resolution);
}

inline double goal_distance(const State& s) { return (s.object - s.goal).norm(); }

/// Closed thresholds: ReachLift needs the object held and raised by at
/// least h_lift; the other tasks need the object within eps_goal of the goal.
inline bool success(const State& s, const World& world) {
  switch (world.task) {
    case TaskId::ReachLift: return s.held && (s.object.z() - world.object_rest_z()) >= world.lift_height;
    case TaskId::PushToGoal:
    case TaskId::PickAndPlace: return goal_distance(s) <= world.goal_tolerance;
  }
  return false;
}

inline bool object_placement_ok(const Vec3& object, const World& world) {
  const Box body{object.array() - world.object_half_extent, object.array() + world.object_half_extent};
  for (const auto& b : world.obstacles)
    if (body.overlaps(b)) return false;
  return true;
}

inline Vec3 sample_in(const Box& region, Rng& rng) {
  Vec3 p;
  for (int i = 0; i < 3; ++i) p[i] = region.lo[i] == region.hi[i] ? region.lo[i] : uniform(rng, region.lo[i], region.hi[i]);
  return p;
}

/// Initial state. Positions are rejection-sampled uniformly from the
/// configured regions until collision-free.
inline State reset(const World& world, std::uint64_t seed, Randomization randomization) {
  Rng rng = make_stream(seed, stream::env_reset);
  State s;
  s.gripper = world.gripper_start;
  s.object = world.object_start;
  s.goal = world.goal;
  s.width = 1.0;
  s.held = false;
  s.step = 0;
  constexpr int kMaxTries = 10000;
  if (randomization != Randomization::None) {
    int tries = 0;
    do {
      s.object = sample_in(world.object_region, rng);
    } while (!object_placement_ok(s.object, world) && ++tries < kMaxTries);
    if (tries >= kMaxTries) throw Error(ErrorCode::config, "object region has no collision-free placement");
  }
  if (randomization == Randomization::ObjectAndGripper) {
    int tries = 0;
    do {
      s.gripper = sample_in(world.gripper_region, rng);
    } while (point_collides(s.gripper, world) && ++tries < kMaxTries);
    if (tries >= kMaxTries) throw Error(ErrorCode::config, "gripper region has no collision-free placement");
  }
  return s;
}

struct StepResult {
  State state;
  double reward = 0.0;
  bool done = false;
  bool success = false;
  bool collided = false;  // the commanded displacement was blocked
};

namespace detail {

// Straight move if clear; otherwise apply each axis in x, y, z order and
// keep only the unblocked ones.
inline Vec3 move_gripper(const Vec3& from, const Vec3& to, const World& world, bool& collided) {
  collided = false;
  if (!segment_collides(from, to, world)) return to;
  collided = true;
  Vec3 p = from;
  for (int axis = 0; axis < 3; ++axis) {
    Vec3 q = p;
    q[axis] = to[axis];
    if (!segment_collides(p, q, world)) p = q;
  }
  return p;
}

inline Box object_bounds(const World& world) {
  return Box{world.workspace.lo.array() + world.object_half_extent,
             world.workspace.hi.array() - world.object_half_extent};
}

inline void push_object(State& s, const Vec3& motion, const World& world) {
  if (s.gripper.z() > s.object.z() + world.object_half_extent) return;
  Eigen::Vector2d d = s.object.head<2>() - s.gripper.head<2>();
  const double dist = d.norm();
  if (dist >= world.contact_distance) return;
  Eigen::Vector2d dir;
  if (dist > 1e-12) {
    dir = d / dist;
  } else if (motion.head<2>().norm() > 1e-12) {
    dir = motion.head<2>().normalized();
  } else {
    return;
  }
  Vec3 moved = s.object;
  moved.head<2>() = s.gripper.head<2>() + dir * world.contact_distance;
  Box bounds = object_bounds(world);
  bounds.lo.z() = bounds.hi.z() = s.object.z();
  s.object = bounds.clamp(moved);
}

}  // namespace detail

/// One control step. Actions are clipped to [-1, 1]^4; the first three
/// components are displacements scaled by the step limit, the fourth is the
/// absolute gripper command (< 0 closes, > 0 opens).
inline StepResult step(const State& s, const Action& raw_action, const World& world) {
  const Action a = clip_action(raw_action);
  StepResult r;
  State& n = r.state;
  n = s;
  const double command = a[3];
  if (n.held && command > 0.0) n.held = false;

  const Vec3 target = world.workspace.clamp(s.gripper + a.head<3>() * world.step_limit());
  n.gripper = detail::move_gripper(s.gripper, target, world, r.collided);
  const Vec3 motion = n.gripper - s.gripper;

  if (n.held) {
    n.object = world.workspace.clamp(s.object + motion);
  } else if (world.pushable) {
    detail::push_object(n, motion, world);
  }

  if (!n.held && command < 0.0 && (n.gripper - n.object).norm() <= world.grasp_distance) n.held = true;

  n.width = 0.5 * (command + 1.0);
  n.step = s.step + 1;
  r.success = success(n, world);
  r.reward = r.success ? 1.0 : 0.0;
  r.done = r.success || n.step >= world.horizon;
  return r;
}

// ---------------------------------------------------------------------------
// Structured text (JSON) world config. Keys absent from the file keep the
// task's built-in defaults; unknown keys are rejected.

namespace detail {

inline Vec3 vec3_from(const nlohmann::json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::config, std::string(key) + " must be a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline Box box_from(const nlohmann::json& j, const char* key) {
  if (!j.is_object()) throw Error(ErrorCode::config, std::string(key) + " must be an object with lo/hi");
  for (const auto& [k, v] : j.items())
    if (k != "lo" && k != "hi") throw Error(ErrorCode::config, std::string("unknown key in ") + key + ": " + k);
  return Box{vec3_from(j.at("lo"), key), vec3_from(j.at("hi"), key)};
}

inline nlohmann::json vec3_to(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }
inline nlohmann::json box_to(const Box& b) { return {{"lo", vec3_to(b.lo)}, {"hi", vec3_to(b.hi)}}; }

}  // namespace detail

inline World world_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::config, "world config must be a JSON object");
  static const std::array<std::string_view, 18> known = {
      "task",         "workspace",       "obstacles",     "object_half_extent", "goal_tolerance",
      "grasp_distance", "lift_height",   "contact_distance", "pushable",        "max_step",
      "collision_resolution", "horizon", "gripper_start", "gripper_region",     "object_start",
      "object_region", "goal",           "schema"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw Error(ErrorCode::config, "unknown world key: " + k);
  try {
    World w = default_world(parse_task(j.at("task").get<std::string>()));
    if (j.contains("workspace")) w.workspace = detail::box_from(j["workspace"], "workspace");
    if (j.contains("obstacles")) {
      w.obstacles.clear();
      for (const auto& b : j["obstacles"]) w.obstacles.push_back(detail::box_from(b, "obstacles[]"));
    }
    auto num = [&](const char* key, double& out) {
      if (j.contains(key)) out = j[key].get<double>();
    };
    num("object_half_extent", w.object_half_extent);
    num("goal_tolerance", w.goal_tolerance);
    num("grasp_distance", w.grasp_distance);
    num("lift_height", w.lift_height);
    num("contact_distance", w.contact_distance);
    num("max_step", w.max_step);
    num("collision_resolution", w.collision_resolution);
    if (j.contains("pushable")) w.pushable = j["pushable"].get<bool>();
    if (j.contains("horizon")) w.horizon = j["horizon"].get<int>();
    if (j.contains("gripper_start")) w.gripper_start = detail::vec3_from(j["gripper_start"], "gripper_start");
    if (j.contains("gripper_region")) w.gripper_region = detail::box_from(j["gripper_region"], "gripper_region");
    if (j.contains("object_start")) w.object_start = detail::vec3_from(j["object_start"], "object_start");
    if (j.contains("object_region")) w.object_region = detail::box_from(j["object_region"], "object_region");
    if (j.contains("goal")) w.goal = detail::vec3_from(j["goal"], "goal");
    w.validate();
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("malformed world config: ") + e.what());
  }
}

inline nlohmann::json world_to_json(const World& w) {
  nlohmann::json obstacles = nlohmann::json::array();
  for (const auto& b : w.obstacles) obstacles.push_back(detail::box_to(b));
  return {{"task", std::string(to_string(w.task))},
          {"workspace", detail::box_to(w.workspace)},
          {"obstacles", obstacles},
          {"object_half_extent", w.object_half_extent},
          {"goal_tolerance", w.goal_tolerance},
          {"grasp_distance", w.grasp_distance},
          {"lift_height", w.lift_height},
          {"contact_distance", w.contact_distance},
          {"pushable", w.pushable},
          {"max_step", w.max_step},
          {"collision_resolution", w.collision_resolution},
          {"horizon", w.horizon},
          {"gripper_start", detail::vec3_to(w.gripper_start)},
          {"gripper_region", detail::box_to(w.gripper_region)},
          {"object_start", detail::vec3_to(w.object_start)},
          {"object_region", detail::box_to(w.object_region)},
          {"goal", detail::vec3_to(w.goal)}};
}

inline World load_world(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open world config: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("world config is not valid JSON: ") + e.what());
  }
  return world_from_json(j);
}

}  // namespace planrl::env
