#pragma once

// The hybrid agent: a mode classifier gates between planner-driven
// navigation and a low-level controller in which a behavior-cloned proposal
// and an exploring actor proposal compete on critic value. Baseline
// variants drop the gate, the cloned proposal, or both.

#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "planrl/env.hpp"
#include "planrl/expert.hpp"
#include "planrl/imitation.hpp"
#include "planrl/mode_waypoint.hpp"
#include "planrl/planner.hpp"
#include "planrl/rng.hpp"
#include "planrl/td3.hpp"

namespace planrl::agent {

using env::Action;
using env::State;
using env::Vec3;
using env::World;
using modes::Mode;

enum class Variant { PLANRL, IBRL, RL_MN, RL };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::PLANRL: return "PLANRL";
    case Variant::IBRL: return "IBRL";
    case Variant::RL_MN: return "RL-MN";
    case Variant::RL: return "RL";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "PLANRL") return Variant::PLANRL;
  if (s == "IBRL") return Variant::IBRL;
  if (s == "RL-MN" || s == "RL_MN") return Variant::RL_MN;
  if (s == "RL") return Variant::RL;
  throw Error(ErrorCode::config, "unknown variant: " + std::string(s));
}

inline bool uses_gate(Variant v) { return v == Variant::PLANRL || v == Variant::RL_MN; }
inline bool uses_bc(Variant v) { return v == Variant::PLANRL || v == Variant::IBRL; }

enum class Source { NAV, IL, RL };

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::NAV: return "NAV";
    case Source::IL: return "IL";
    case Source::RL: return "RL";
  }
  return "?";
}

struct ActionDecision {
  Mode mode = modes::kInteraction;
  std::optional<Vec3> waypoint;
  Action action = Action::Zero();
  Source source = Source::RL;
  std::optional<double> q_il, q_rl;
  std::array<int, 2> pair = {0, 1};  // arbitration critics (interaction mode)
  bool planner_failed = false;
  bool replanned = false;
};

struct AgentConfig {
  Variant variant = Variant::PLANRL;
  rl::RLHyperparams rl;
  planning::PlannerConfig planner;
  double distance_threshold = 0.0;   // 0: 10% of the workspace diagonal
  double hysteresis_factor = 1.5;
  double replan_deviation = 2.0;     // in units of the per-step move limit
  std::optional<int> force_mode;     // skip the classifier
  bool disable_bc = false;
  double critic_scale = 1.0;         // multiplies critic outputs seen by arbitration only
  bool count_interaction_only = false;
  bool store_nav_transitions = false;
  int interval = 1000;
  env::Randomization train_randomization = env::Randomization::ObjectPos;

  bool has_bc() const { return uses_bc(variant) && !disable_bc; }
  bool gated() const { return uses_gate(variant) && !force_mode; }

  void validate() const {
    rl.validate();
    planner.validate();
    if (distance_threshold < 0.0) throw Error(ErrorCode::config, "distance threshold must be >= 0");
    if (!(hysteresis_factor >= 1.0)) throw Error(ErrorCode::config, "hysteresis factor must be >= 1");
    if (!(replan_deviation > 0.0)) throw Error(ErrorCode::config, "replan deviation must be > 0");
    if (force_mode && *force_mode != 0 && *force_mode != 1) throw Error(ErrorCode::config, "forced mode must be 0 or 1");
    if (!(critic_scale > 0.0)) throw Error(ErrorCode::config, "critic scale must be > 0");
    if (interval < 1) throw Error(ErrorCode::config, "metrics interval must be >= 1");
  }
};

/// Frozen supervised models.
struct Models {
  std::optional<BCPolicy> bc;
  std::optional<modes::ModeNetModel> modenet;
  std::optional<modes::NavNetModel> navnet;
};

inline void check_models(const AgentConfig& cfg, const Models& m) {
  if (cfg.has_bc() && !m.bc) throw Error(ErrorCode::config, std::string(to_string(cfg.variant)) + " needs a BC policy");
  if (uses_gate(cfg.variant)) {
    if (!cfg.force_mode && !m.modenet) throw Error(ErrorCode::config, "gated variant needs a trained ModeNet");
    if ((!cfg.force_mode || *cfg.force_mode == 0) && !m.navnet)
      throw Error(ErrorCode::config, "gated variant needs a trained NavNet");
  }
}

/// Per-step decision maker. Holds the navigation cache, the hysteresis
/// latch, and the exploration and arbitration streams; reads but never
/// modifies the learner and models.
class Agent {
 public:
  Agent(const World& world, const AgentConfig& cfg, const Models& models, const rl::Learner& learner, std::uint64_t seed)
      : world_(world),
        cfg_(cfg),
        models_(models),
        learner_(learner),
        seed_(seed),
        explore_rng_(make_stream(seed, stream::exploration)),
        arbitration_rng_(make_stream(seed, stream::arbitration)) {
    cfg_.validate();
    check_models(cfg_, models_);
    d_thresh_ = cfg_.distance_threshold > 0.0 ? cfg_.distance_threshold : modes::default_distance_threshold(world_);
  }

  void begin_episode() {
    path_.reset();
    latched_ = false;
  }

  long long plans() const { return plans_; }
  long long planner_failures() const { return planner_failures_; }

  Mode choose_mode(const State& s) {
    if (cfg_.force_mode) return static_cast<Mode>(*cfg_.force_mode);
    if (!uses_gate(cfg_.variant)) return modes::kInteraction;
    Mode m = modes::predict_mode(*models_.modenet, s);
    if (latched_ && latched_held_ != s.held) latched_ = false;  // phase change
    if (m == modes::kPlanning && latched_ &&
        modes::phase_distance(s, world_) <= cfg_.hysteresis_factor * d_thresh_)
      m = modes::kInteraction;
    if (m == modes::kInteraction) {
      latched_ = true;
      latched_held_ = s.held;
    } else {
      latched_ = false;
    }
    return m;
  }

  ActionDecision act(const State& s, bool train_mode) {
    ActionDecision d;
    d.mode = choose_mode(s);
    if (d.mode == modes::kPlanning) {
      navigate(s, d);
      return d;
    }
    path_.reset();
    const rl::Obs obs = env::observe(s);
    d.action = train_mode ? rl::explore_action(learner_.actor, obs, cfg_.rl.exploration_std, explore_rng_)
                          : rl::policy_action(learner_.actor, obs);
    d.pair = rl::sample_pair(learner_.critics.size(), arbitration_rng_);
    d.q_rl = cfg_.critic_scale * rl::pair_min_q(learner_.critics, d.pair, obs, d.action);
    d.source = Source::RL;
    if (cfg_.has_bc()) {
      const Action a_il = env::clip_action(bc_act(*models_.bc, nn::Vec(obs)));
      d.q_il = cfg_.critic_scale * rl::pair_min_q(learner_.critics, d.pair, obs, a_il);
      if (*d.q_il > *d.q_rl) {
        d.source = Source::IL;
        d.action = a_il;
      }
    }
    return d;
  }

 private:
  void navigate(const State& s, ActionDecision& d) {
    d.source = Source::NAV;
    const Vec3 w = modes::predict_waypoint(*models_.navnet, s, world_);
    d.waypoint = w;
    const double max_dev = cfg_.replan_deviation * world_.step_limit();
    const bool stale = !path_ || (w - waypoint_).norm() > cfg_.planner.goal_tolerance ||
                       planning::distance_to_path(s.gripper, *path_) > max_dev;
    if (stale) {
      planning::PlannerConfig pc = cfg_.planner;
      pc.seed = splitmix64(seed_ ^ splitmix64(static_cast<std::uint64_t>(plans_)));
      ++plans_;
      d.replanned = true;
      try {
        path_ = planning::plan(s.gripper, w, world_, pc);
        waypoint_ = w;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::plan_failed && e.code() != ErrorCode::invalid_argument) throw;
        path_.reset();
      }
    }
    if (!path_) {
      ++planner_failures_;
      d.planner_failed = true;
      const Vec3 delta = (w - s.gripper) / world_.step_limit();
      d.action.head<3>() = delta.cwiseMax(-1.0).cwiseMin(1.0);
      d.action[3] = s.held ? -1.0 : 1.0;
      return;
    }
    d.action = planning::nav_action(s, *path_, world_);
  }

  World world_;
  AgentConfig cfg_;
  const Models& models_;
  const rl::Learner& learner_;
  std::uint64_t seed_;
  Rng explore_rng_;
  Rng arbitration_rng_;
  double d_thresh_ = 0.0;
  std::optional<planning::Path> path_;
  Vec3 waypoint_ = Vec3::Zero();
  bool latched_ = false;
  bool latched_held_ = false;
  long long plans_ = 0;
  long long planner_failures_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct IntervalMetrics {
  long long step = 0;  // counted steps at the end of the interval
  long long steps_in_interval = 0;
  long long episodes = 0;
  long long successes = 0;
  double success_rate = 0.0;  // successes / episodes ended in the interval; 0 when none
  long long nav_steps = 0, il_steps = 0, rl_steps = 0;
  double il_fraction = 0.0;  // over interaction steps
  double rl_fraction = 0.0;
  double nav_fraction = 0.0;  // over all steps in the interval
  long long planner_failures = 0;
  double mean_episode_length = 0.0;
  double mean_return = 0.0;
};

struct RunMetrics {
  std::vector<IntervalMetrics> intervals;
  std::vector<double> episode_returns;
  std::vector<int> episode_lengths;
  std::vector<bool> episode_success;
  long long env_steps = 0;
  long long updates = 0;
  long long planner_failures = 0;
  double wall_clock_seconds = 0.0;
};

/// il_fraction per interval.
inline std::vector<double> il_fraction_curve(const RunMetrics& m) {
  std::vector<double> out;
  for (const auto& i : m.intervals) out.push_back(i.il_fraction);
  return out;
}

struct TrainHooks {
  std::function<void(const IntervalMetrics&, const rl::Learner&)> on_interval;
  std::ostream* decision_log = nullptr;
};

inline constexpr const char* kDecisionColumns = "t,episode,mode,source,k0,k1,q_il,q_rl,a0,a1,a2,a3,reward,done,success";

namespace detail {

inline std::string fmt_opt(const std::optional<double>& v) { return v ? expert::detail::fmt(*v) : std::string(); }

inline void log_decision(std::ostream& os, long long t, long long episode, const ActionDecision& d, double reward,
                         bool done, bool success) {
  os << t << ',' << episode << ',' << static_cast<int>(d.mode) << ',' << to_string(d.source) << ',';
  if (d.mode == modes::kInteraction)
    os << d.pair[0] << ',' << d.pair[1];
  else
    os << ',';
  os << ',' << fmt_opt(d.q_il) << ',' << fmt_opt(d.q_rl);
  for (int i = 0; i < env::kActionDim; ++i) os << ',' << expert::detail::fmt(d.action[i]);
  os << ',' << expert::detail::fmt(reward) << ',' << (done ? 1 : 0) << ',' << (success ? 1 : 0) << '\n';
}

}  // namespace detail

struct TrainResult {
  RunMetrics metrics;
  rl::Learner learner;
  rl::ReplayBuffer buffer{1};
  std::vector<std::uint64_t> episode_seeds;
};

/// Episode seeds for a training run, in order.
inline Rng training_episode_stream(std::uint64_t seed) { return make_stream(seed, stream::env_reset); }

/// Runs the interaction loop for hp.total_steps counted steps. Interaction
/// transitions go to the buffer; navigation transitions only when
/// store_nav_transitions is set. Every update_every-th step that is an
/// interaction step triggers one learner update once the buffer holds a
/// batch.
inline TrainResult train(const World& world, const AgentConfig& cfg, const Models& models,
                         const expert::DemoDataset* demos, std::uint64_t seed, const TrainHooks& hooks = {}) {
  cfg.validate();
  check_models(cfg, models);
  world.validate();
  const auto clock_start = std::chrono::steady_clock::now();
  TrainResult out;
  out.learner = rl::make_learner(cfg.rl, seed);
  out.buffer = rl::ReplayBuffer(cfg.rl.buffer_capacity);
  if (cfg.has_bc()) {
    if (!demos || demos->transition_count() == 0) throw Error(ErrorCode::config, "variant needs demonstrations");
    rl::seed_buffer(out.buffer, *demos);
  }
  Agent agent(world, cfg, models, out.learner, seed);
  Rng episode_rng = training_episode_stream(seed);
  if (hooks.decision_log) *hooks.decision_log << kDecisionColumns << '\n';

  const long long budget = cfg.rl.total_steps;
  const long long hard_cap = cfg.count_interaction_only ? 10 * budget + world.horizon : budget;
  auto& m = out.metrics;
  IntervalMetrics cur;
  long long ep_steps_sum = 0;
  double ep_return_sum = 0.0;
  long long failures_at_interval_start = 0;

  auto close_interval = [&](long long counted) {
    cur.step = counted;
    cur.success_rate = cur.episodes > 0 ? static_cast<double>(cur.successes) / static_cast<double>(cur.episodes) : 0.0;
    const long long inter = cur.il_steps + cur.rl_steps;
    cur.il_fraction = inter > 0 ? static_cast<double>(cur.il_steps) / static_cast<double>(inter) : 0.0;
    cur.rl_fraction = inter > 0 ? static_cast<double>(cur.rl_steps) / static_cast<double>(inter) : 0.0;
    const long long all = cur.nav_steps + inter;
    cur.nav_fraction = all > 0 ? static_cast<double>(cur.nav_steps) / static_cast<double>(all) : 0.0;
    cur.planner_failures = agent.planner_failures() - failures_at_interval_start;
    failures_at_interval_start = agent.planner_failures();
    cur.mean_episode_length = cur.episodes > 0 ? static_cast<double>(ep_steps_sum) / static_cast<double>(cur.episodes) : 0.0;
    cur.mean_return = cur.episodes > 0 ? ep_return_sum / static_cast<double>(cur.episodes) : 0.0;
    m.intervals.push_back(cur);
    if (hooks.on_interval) hooks.on_interval(cur, out.learner);
    cur = IntervalMetrics{};
    ep_steps_sum = 0;
    ep_return_sum = 0.0;
  };

  long long counted = 0;
  long long t = 0;  // all environment steps
  long long episode = 0;
  State s;
  bool need_reset = true;
  int ep_len = 0;
  double ep_return = 0.0;
  while (counted < budget && t < hard_cap) {
    if (need_reset) {
      out.episode_seeds.push_back(episode_rng());
      s = env::reset(world, out.episode_seeds.back(), cfg.train_randomization);
      agent.begin_episode();
      need_reset = false;
      ep_len = 0;
      ep_return = 0.0;
    }
    const ActionDecision d = agent.act(s, true);
    const auto r = env::step(s, d.action, world);
    ++t;
    const bool interaction = d.mode == modes::kInteraction;
    if (interaction || !cfg.count_interaction_only) ++counted;
    ++cur.steps_in_interval;
    if (d.source == Source::NAV)
      ++cur.nav_steps;
    else if (d.source == Source::IL)
      ++cur.il_steps;
    else
      ++cur.rl_steps;
    if (interaction || cfg.store_nav_transitions)
      out.buffer.add(rl::Transition{env::observe(s), d.action, r.reward, env::observe(r.state), r.success});
    if (interaction && t % cfg.rl.update_every == 0 &&
        out.buffer.size() >= static_cast<std::size_t>(cfg.rl.batch_size)) {
      rl::update(out.learner, out.buffer);
      ++m.updates;
    }
    if (hooks.decision_log) detail::log_decision(*hooks.decision_log, t, episode, d, r.reward, r.done, r.success);
    ++ep_len;
    ep_return += r.reward;
    s = r.state;
    if (r.done) {
      ++cur.episodes;
      cur.successes += r.success ? 1 : 0;
      ep_steps_sum += ep_len;
      ep_return_sum += ep_return;
      m.episode_returns.push_back(ep_return);
      m.episode_lengths.push_back(ep_len);
      m.episode_success.push_back(r.success);
      ++episode;
      need_reset = true;
    }
    if (interaction || !cfg.count_interaction_only)
      if (counted % cfg.interval == 0) close_interval(counted);
  }
  if (cur.steps_in_interval > 0) close_interval(counted);
  m.env_steps = t;
  m.planner_failures = agent.planner_failures();
  m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Success rate of a state -> action policy over episodes reset under the
/// given protocol. Episode seeds come from the evaluation stream.
template <typename Policy>
double evaluate_policy(const World& world, Policy&& policy, env::Randomization protocol, int episodes,
                       std::uint64_t seed) {
  if (episodes < 1) throw Error(ErrorCode::invalid_argument, "episode count must be >= 1");
  Rng eval_rng = make_stream(seed, stream::evaluation);
  int successes = 0;
  for (int e = 0; e < episodes; ++e) {
    State s = env::reset(world, eval_rng(), protocol);
    policy.begin_episode();
    for (;;) {
      const auto r = env::step(s, policy.act(s), world);
      s = r.state;
      if (r.done) {
        successes += r.success ? 1 : 0;
        break;
      }
    }
  }
  return static_cast<double>(successes) / static_cast<double>(episodes);
}

/// Wraps a plain callable as a policy with an empty episode hook.
template <typename F>
struct FunctionPolicy {
  F f;
  void begin_episode() {}
  Action act(const State& s) { return f(s); }
};

template <typename F>
FunctionPolicy<F> function_policy(F f) {
  return FunctionPolicy<F>{std::move(f)};
}

/// Everything needed to run a trained agent.
struct Bundle {
  World world;
  AgentConfig config;
  Models models;
  rl::Learner learner;
};

/// Greedy execution: no exploration noise; arbitration stays active.
inline double evaluate(const Bundle& b, env::Randomization protocol, int episodes, std::uint64_t seed) {
  Agent agent(b.world, b.config, b.models, b.learner, seed);
  struct Greedy {
    Agent& a;
    void begin_episode() { a.begin_episode(); }
    Action act(const State& s) { return a.act(s, false).action; }
  } greedy{agent};
  return evaluate_policy(b.world, greedy, protocol, episodes, seed);
}

// Bundle file: "PLRLAGT1", world JSON, variant, agent settings, flags for
// the three optional models followed by each present model, then the
// learner block.
inline constexpr std::string_view kBundleMagic = "PLRLAGT1";

inline void write_bundle(std::ostream& os, const Bundle& b, const rl::ReplayBuffer* buffer = nullptr) {
  io::write_bytes(os, kBundleMagic);
  io::write_string(os, env::world_to_json(b.world).dump());
  io::write_string(os, std::string(to_string(b.config.variant)));
  io::write_f64(os, b.config.distance_threshold);
  io::write_f64(os, b.config.hysteresis_factor);
  io::write_f64(os, b.config.replan_deviation);
  io::write_u8(os, b.config.disable_bc ? 1 : 0);
  io::write_u8(os, b.config.force_mode ? static_cast<std::uint8_t>(1 + *b.config.force_mode) : 0);
  const auto& p = b.config.planner;
  io::write_u32(os, static_cast<std::uint32_t>(p.samples_per_batch));
  io::write_u32(os, static_cast<std::uint32_t>(p.batches));
  io::write_f64(os, p.goal_bias);
  io::write_f64(os, p.connection_radius);
  io::write_f64(os, p.goal_tolerance);
  io::write_f64(os, p.resolution);
  io::write_f64(os, p.clearance);
  io::write_u32(os, static_cast<std::uint32_t>(p.shortcut_iterations));
  io::write_u8(os, b.models.bc ? 1 : 0);
  if (b.models.bc) write_bc(os, *b.models.bc);
  io::write_u8(os, b.models.modenet ? 1 : 0);
  if (b.models.modenet) modes::write_modenet(os, *b.models.modenet);
  io::write_u8(os, b.models.navnet ? 1 : 0);
  if (b.models.navnet) modes::write_navnet(os, *b.models.navnet);
  rl::write_learner(os, b.learner, buffer);
}

inline Bundle read_bundle(std::istream& is) {
  io::expect_magic(is, kBundleMagic);
  Bundle b;
  try {
    b.world = env::world_from_json(nlohmann::json::parse(io::read_string(is)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format, std::string("bundle world: ") + e.what());
  }
  b.config.variant = parse_variant(io::read_string(is));
  b.config.distance_threshold = io::read_f64(is);
  b.config.hysteresis_factor = io::read_f64(is);
  b.config.replan_deviation = io::read_f64(is);
  b.config.disable_bc = io::read_u8(is) != 0;
  const auto fm = io::read_u8(is);
  if (fm > 2) throw Error(ErrorCode::format, "bad forced-mode flag");
  if (fm) b.config.force_mode = fm - 1;
  auto& p = b.config.planner;
  p.samples_per_batch = static_cast<int>(io::read_u32(is));
  p.batches = static_cast<int>(io::read_u32(is));
  p.goal_bias = io::read_f64(is);
  p.connection_radius = io::read_f64(is);
  p.goal_tolerance = io::read_f64(is);
  p.resolution = io::read_f64(is);
  p.clearance = io::read_f64(is);
  p.shortcut_iterations = static_cast<int>(io::read_u32(is));
  if (io::read_u8(is)) b.models.bc = read_bc(is);
  if (io::read_u8(is)) b.models.modenet = modes::read_modenet(is);
  if (io::read_u8(is)) b.models.navnet = modes::read_navnet(is);
  b.learner = rl::read_learner(is);
  b.config.rl = b.learner.hp;
  b.config.validate();
  check_models(b.config, b.models);
  return b;
}

inline void save_bundle(const std::filesystem::path& path, const Bundle& b, const rl::ReplayBuffer* buffer = nullptr) {
  io::write_file_atomic(path, [&](std::ostream& os) { write_bundle(os, b, buffer); });
}

inline Bundle load_bundle(const std::filesystem::path& path) {
  auto is = io::open_input(path);
  return read_bundle(is);
}

}  // namespace planrl::agent
