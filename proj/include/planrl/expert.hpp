#pragma once

// Scripted proportional controllers per task and the demonstration dataset
// they produce.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "planrl/binary_io.hpp"
#include "planrl/env.hpp"
#include "planrl/error.hpp"
#include "planrl/rng.hpp"

namespace planrl::expert {

using env::Action;
using env::State;
using env::Vec3;
using env::World;

struct ExpertConfig {
  double gain = 1.0;               // fraction of the remaining displacement covered per step
  double approach_height = 0.06;   // hover height above the object before descending
  double cruise_margin = 0.08;     // clearance over the tallest obstacle when detouring
  double align_tolerance = 0.01;   // xy error below which vertical moves start
  double noise_std = -1.0;         // < 0: task default (0.1 on PickAndPlace, else 0)

  double effective_noise(env::TaskId task) const {
    if (noise_std >= 0.0) return noise_std;
    return task == env::TaskId::PickAndPlace ? 0.1 : 0.0;
  }
};

namespace detail {

inline Action toward(const Vec3& from, const Vec3& target, double command, const World& world, double gain) {
  Action a;
  a.head<3>() = gain * (target - from) / world.step_limit();
  a[3] = command;
  return env::clip_action(a);
}

inline double cruise_height(const World& world, const ExpertConfig& cfg) {
  return std::min(world.obstacle_top() + cfg.cruise_margin, world.workspace.hi.z() - 0.02);
}

// Straight to `dest` when the segment is clear; otherwise climb to cruise
// height first, then travel level toward the destination's xy.
inline Vec3 route(const Vec3& g, const Vec3& dest, const World& world, const ExpertConfig& cfg) {
  if (!env::segment_collides(g, dest, world)) return dest;
  const double cruise = cruise_height(world, cfg);
  if (g.z() < cruise - 1e-3) return Vec3(g.x(), g.y(), cruise);
  return Vec3(dest.x(), dest.y(), cruise);
}

inline double xy_distance(const Vec3& a, const Vec3& b) { return (a.head<2>() - b.head<2>()).norm(); }

inline Action pick(const State& s, const World& world, const ExpertConfig& cfg) {
  const Vec3& g = s.gripper;
  const Vec3& o = s.object;
  if ((g - o).norm() <= 0.5 * world.grasp_distance) return toward(g, o, -1.0, world, cfg.gain);
  if (xy_distance(g, o) <= cfg.align_tolerance && g.z() >= o.z() - 1e-9 &&
      g.z() <= o.z() + cfg.approach_height + 1e-9)
    return toward(g, o, 1.0, world, cfg.gain);
  const Vec3 hover = o + Vec3(0, 0, cfg.approach_height);
  return toward(g, route(g, hover, world, cfg), 1.0, world, cfg.gain);
}

inline Action reach_lift(const State& s, const World& world, const ExpertConfig& cfg) {
  if (!s.held) return pick(s, world, cfg);
  const double lift_z = world.object_rest_z() + world.lift_height + 0.02;
  const Vec3 target = s.gripper + Vec3(0, 0, lift_z - s.object.z());
  return toward(s.gripper, target, -1.0, world, cfg.gain);
}

inline Action pick_and_place(const State& s, const World& world, const ExpertConfig& cfg) {
  if (!s.held) return pick(s, world, cfg);
  const Vec3 offset = s.gripper - s.object;
  const Vec3 place = s.goal + offset;
  if (xy_distance(s.object, s.goal) <= cfg.align_tolerance) return toward(s.gripper, place, -1.0, world, cfg.gain);
  const Vec3 hover = place + Vec3(0, 0, cfg.approach_height);
  return toward(s.gripper, route(s.gripper, hover, world, cfg), -1.0, world, cfg.gain);
}

inline Action push(const State& s, const World& world, const ExpertConfig& cfg) {
  const Vec3& g = s.gripper;
  const Vec3& o = s.object;
  Eigen::Vector2d u = s.goal.head<2>() - o.head<2>();
  if (u.norm() < 1e-9) return toward(g, g, 1.0, world, cfg.gain);
  u.normalize();
  const double standoff = world.contact_distance + 0.03;
  const Vec3 behind(o.x() - u.x() * standoff, o.y() - u.y() * standoff, o.z());

  const Eigen::Vector2d rel = o.head<2>() - g.head<2>();
  const double along = rel.dot(u);
  const double lateral = std::abs(rel.x() * u.y() - rel.y() * u.x());
  const bool low = std::abs(g.z() - o.z()) <= 0.015;
  if (low && along > 0.0 && lateral <= 0.02 && rel.norm() <= standoff + 0.02) {
    // Drive into the object along the object->goal direction.
    const Vec3 drive(o.x() - u.x() * (world.contact_distance - 0.02), o.y() - u.y() * (world.contact_distance - 0.02),
                     o.z());
    return toward(g, drive, 1.0, world, cfg.gain);
  }
  if (xy_distance(g, behind) <= 0.015) return toward(g, behind, 1.0, world, cfg.gain);
  const Vec3 hover = behind + Vec3(0, 0, cfg.approach_height);
  if (low && rel.norm() <= standoff + 0.05) return toward(g, Vec3(g.x(), g.y(), hover.z()), 1.0, world, cfg.gain);
  return toward(g, route(g, hover, world, cfg), 1.0, world, cfg.gain);
}

}  // namespace detail

/// Deterministic phase controller: approach above the object, descend,
/// grasp, then lift or carry to the goal (push: line up behind the object
/// and drive it toward the goal).
inline Action expert_action(const State& s, const World& world, const ExpertConfig& cfg = {}) {
  switch (world.task) {
    case env::TaskId::ReachLift: return detail::reach_lift(s, world, cfg);
    case env::TaskId::PushToGoal: return detail::push(s, world, cfg);
    case env::TaskId::PickAndPlace: return detail::pick_and_place(s, world, cfg);
  }
  return Action::Zero();
}

struct Trajectory {
  std::vector<State> states;    // s_0 .. s_{T-1}
  std::vector<Action> actions;  // a_0 .. a_{T-1}
  std::vector<double> rewards;  // r_1 .. r_T
  State final_state;            // s_T
  std::uint64_t seed = 0;
  bool success = false;

  std::size_t size() const { return actions.size(); }
};

struct DemoDataset {
  env::TaskId task = env::TaskId::ReachLift;
  std::vector<Trajectory> trajectories;

  std::size_t transition_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.size();
    return n;
  }
};

template <typename Policy>
Trajectory rollout(const World& world, const State& start, Policy&& policy) {
  Trajectory traj;
  State s = start;
  for (;;) {
    const Action a = env::clip_action(policy(s));
    const auto r = env::step(s, a, world);
    traj.states.push_back(s);
    traj.actions.push_back(a);
    traj.rewards.push_back(r.reward);
    s = r.state;
    if (r.done) {
      traj.success = r.success;
      break;
    }
  }
  traj.final_state = s;
  return traj;
}

inline Trajectory expert_rollout(const World& world, std::uint64_t episode_seed, env::Randomization randomization,
                                 const ExpertConfig& cfg = {}) {
  const State start = env::reset(world, episode_seed, randomization);
  const double noise = cfg.effective_noise(world.task);
  Rng rng = make_stream(episode_seed, stream::demos);
  auto traj = rollout(world, start, [&](const State& s) {
    Action a = expert_action(s, world, cfg);
    if (noise > 0.0)
      for (int i = 0; i < 3; ++i) a[i] += normal(rng, 0.0, noise);
    return a;
  });
  traj.seed = episode_seed;
  return traj;
}

/// Exactly n successful expert trajectories; failed rollouts are discarded
/// and resampled up to a retry budget of 4n + 16 attempts.
inline DemoDataset generate_demos(const World& world, int n, std::uint64_t seed,
                                  env::Randomization randomization = env::Randomization::ObjectPos,
                                  const ExpertConfig& cfg = {}) {
  if (n < 1) throw Error(ErrorCode::invalid_argument, "demo count must be >= 1");
  DemoDataset ds;
  ds.task = world.task;
  const int budget = 4 * n + 16;
  for (int attempt = 0; attempt < budget && static_cast<int>(ds.trajectories.size()) < n; ++attempt) {
    const std::uint64_t episode_seed = splitmix64(seed * 1000003ULL + static_cast<std::uint64_t>(attempt));
    auto traj = expert_rollout(world, episode_seed, randomization, cfg);
    if (traj.success) ds.trajectories.push_back(std::move(traj));
  }
  if (static_cast<int>(ds.trajectories.size()) < n)
    throw Error(ErrorCode::demo_budget_exhausted, "expert produced only " + std::to_string(ds.trajectories.size()) +
                                                      " successes in " + std::to_string(budget) + " attempts");
  return ds;
}

// ---------------------------------------------------------------------------
// Demo file: text header followed by CSV rows. Every real is printed with 17
// significant digits, which round-trips IEEE doubles exactly.
//
//   PLANRL-DEMOS 1
//   task <name>
//   state_dim 12
//   action_dim 4
//   trajectories <n>
//   traj,kind,t,seed,success,gx,gy,gz,width,ox,oy,oz,goalx,goaly,goalz,held,step,a0,a1,a2,a3,reward,done
//
// kind is "step" for (s_t, a_t, r_{t+1}, done) rows and "final" for s_T.

inline constexpr const char* kDemoMagic = "PLANRL-DEMOS 1";
inline constexpr int kStateFields = 12;

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_state(std::ostream& os, const State& s) {
  os << fmt(s.gripper.x()) << ',' << fmt(s.gripper.y()) << ',' << fmt(s.gripper.z()) << ',' << fmt(s.width) << ','
     << fmt(s.object.x()) << ',' << fmt(s.object.y()) << ',' << fmt(s.object.z()) << ',' << fmt(s.goal.x()) << ','
     << fmt(s.goal.y()) << ',' << fmt(s.goal.z()) << ',' << (s.held ? 1 : 0) << ',' << s.step;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw Error(ErrorCode::format, "trailing characters in number: " + s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::format, "not a number: " + s);
  }
}

inline long long parse_int(const std::string& s) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw Error(ErrorCode::format, "trailing characters in integer: " + s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::format, "not an integer: " + s);
  }
}

inline std::uint64_t parse_u64(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw Error(ErrorCode::format, "trailing characters in integer: " + s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::format, "not an unsigned integer: " + s);
  }
}

inline State read_state(const std::vector<std::string>& f, std::size_t at) {
  State s;
  s.gripper = Vec3(parse_double(f[at]), parse_double(f[at + 1]), parse_double(f[at + 2]));
  s.width = parse_double(f[at + 3]);
  s.object = Vec3(parse_double(f[at + 4]), parse_double(f[at + 5]), parse_double(f[at + 6]));
  s.goal = Vec3(parse_double(f[at + 7]), parse_double(f[at + 8]), parse_double(f[at + 9]));
  s.held = parse_int(f[at + 10]) != 0;
  s.step = static_cast<int>(parse_int(f[at + 11]));
  return s;
}

inline void expect_line(std::istream& is, const std::string& key, std::string& value) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::format, "missing header line: " + key);
  if (line.rfind(key + " ", 0) != 0) throw Error(ErrorCode::format, "expected header '" + key + "', got: " + line);
  value = line.substr(key.size() + 1);
}

}  // namespace detail

inline constexpr const char* kDemoColumns =
    "traj,kind,t,seed,success,gx,gy,gz,width,ox,oy,oz,goalx,goaly,goalz,held,step,a0,a1,a2,a3,reward,done";

inline void write_demos(std::ostream& os, const DemoDataset& ds) {
  os << kDemoMagic << '\n'
     << "task " << env::to_string(ds.task) << '\n'
     << "state_dim " << kStateFields << '\n'
     << "action_dim " << env::kActionDim << '\n'
     << "trajectories " << ds.trajectories.size() << '\n'
     << kDemoColumns << '\n';
  for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
    const auto& tr = ds.trajectories[k];
    for (std::size_t t = 0; t < tr.size(); ++t) {
      os << k << ",step," << t << ',' << tr.seed << ',' << (tr.success ? 1 : 0) << ',';
      detail::write_state(os, tr.states[t]);
      for (int i = 0; i < env::kActionDim; ++i) os << ',' << detail::fmt(tr.actions[t][i]);
      os << ',' << detail::fmt(tr.rewards[t]) << ',' << (t + 1 == tr.size() ? 1 : 0) << '\n';
    }
    os << k << ",final," << tr.size() << ',' << tr.seed << ',' << (tr.success ? 1 : 0) << ',';
    detail::write_state(os, tr.final_state);
    os << ",,,,,,\n";
  }
}

inline DemoDataset read_demos(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kDemoMagic) throw Error(ErrorCode::format, "not a demo file (bad magic)");
  std::string value;
  DemoDataset ds;
  detail::expect_line(is, "task", value);
  ds.task = env::parse_task(value);
  detail::expect_line(is, "state_dim", value);
  if (detail::parse_int(value) != kStateFields) throw Error(ErrorCode::format, "unsupported state_dim " + value);
  detail::expect_line(is, "action_dim", value);
  if (detail::parse_int(value) != env::kActionDim) throw Error(ErrorCode::format, "unsupported action_dim " + value);
  detail::expect_line(is, "trajectories", value);
  const auto count = detail::parse_int(value);
  if (count < 0) throw Error(ErrorCode::format, "negative trajectory count");
  if (!std::getline(is, line) || line != kDemoColumns) throw Error(ErrorCode::format, "unexpected column header");
  ds.trajectories.resize(static_cast<std::size_t>(count));
  std::vector<bool> finished(ds.trajectories.size(), false);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line);
    if (f.size() != 23) throw Error(ErrorCode::format, "demo row has " + std::to_string(f.size()) + " fields");
    const auto k = detail::parse_int(f[0]);
    if (k < 0 || k >= count) throw Error(ErrorCode::format, "trajectory index out of range");
    auto& tr = ds.trajectories[static_cast<std::size_t>(k)];
    if (finished[static_cast<std::size_t>(k)]) throw Error(ErrorCode::format, "row after final state");
    const auto t = detail::parse_int(f[2]);
    tr.seed = detail::parse_u64(f[3]);
    tr.success = detail::parse_int(f[4]) != 0;
    const State s = detail::read_state(f, 5);
    if (f[1] == "step") {
      if (t != static_cast<long long>(tr.size())) throw Error(ErrorCode::format, "steps out of order");
      Action a;
      for (int i = 0; i < env::kActionDim; ++i) a[i] = detail::parse_double(f[17 + static_cast<std::size_t>(i)]);
      tr.states.push_back(s);
      tr.actions.push_back(a);
      tr.rewards.push_back(detail::parse_double(f[21]));
    } else if (f[1] == "final") {
      if (t != static_cast<long long>(tr.size())) throw Error(ErrorCode::format, "final row index mismatch");
      tr.final_state = s;
      finished[static_cast<std::size_t>(k)] = true;
    } else {
      throw Error(ErrorCode::format, "unknown row kind: " + f[1]);
    }
  }
  for (std::size_t k = 0; k < finished.size(); ++k)
    if (!finished[k]) throw Error(ErrorCode::format, "trajectory " + std::to_string(k) + " has no final row");
  return ds;
}

inline void save_demos(const std::filesystem::path& path, const DemoDataset& ds) {
  io::write_file_atomic(path, [&](std::ostream& os) { write_demos(os, ds); });
}

inline DemoDataset load_demos(const std::filesystem::path& path) {
  auto is = io::open_input(path);
  return read_demos(is);
}

}  // namespace planrl::expert
