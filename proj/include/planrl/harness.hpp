#pragma once

// Experiment harness: JSON experiment configs, supervised model preparation,
// single runs and multi-seed sweeps, versioned CSV outputs, aggregation and
// SVG line charts.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "planrl/agent.hpp"
#include "planrl/binary_io.hpp"
#include "planrl/env.hpp"
#include "planrl/expert.hpp"
#include "planrl/imitation.hpp"
#include "planrl/mode_waypoint.hpp"
#include "planrl/planner.hpp"
#include "planrl/td3.hpp"

namespace planrl::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

struct DemoSettings {
  int count = 10;
  std::optional<std::uint64_t> seed;  // default: run seed
  env::Randomization randomization = env::Randomization::ObjectPos;
  expert::ExpertConfig expert;
};

struct EvalSettings {
  int episodes = 100;
  std::vector<env::Randomization> protocols = {env::Randomization::ObjectPos, env::Randomization::ObjectAndGripper};
  int curve_every = 0;  // intervals between mid-training evaluations; 0 = final only
  int curve_episodes = 20;
};

/// Paths to precomputed artifacts; anything absent is generated in-process
/// from the run seed.
struct ArtifactPaths {
  std::optional<fs::path> demos, bc, modenet, navnet;
};

struct ExperimentConfig {
  env::World world = env::default_world(env::TaskId::ReachLift);
  agent::AgentConfig agent;
  std::vector<agent::Variant> variants = {agent::Variant::PLANRL, agent::Variant::IBRL, agent::Variant::RL_MN,
                                          agent::Variant::RL};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  fs::path output_dir = "runs";
  DemoSettings demos;
  BCConfig bc;
  modes::SupervisionConfig supervision;
  modes::HeadConfig heads;
  EvalSettings eval;
  ArtifactPaths artifacts;
  bool decision_log = false;
  int jobs = 1;
  std::vector<std::string> warnings;
};

namespace detail {

/// Reads keys from one JSON object and rejects any it was not asked about.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw Error(ErrorCode::config, name_ + " must be a JSON object");
  }

  bool has(const char* key) {
    known_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::config, name_ + "." + key + ": " + e.what());
    }
  }

  const json& at(const char* key) {
    known_.insert(key);
    return j_.at(key);
  }

  std::string path(const char* key) const { return name_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!known_.count(k)) throw Error(ErrorCode::config, "unknown key " + name_ + "." + k);
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> known_;
};

inline void read_planner(const json& j, planning::PlannerConfig& p) {
  Section s(j, "planner");
  s.get("samples_per_batch", p.samples_per_batch);
  s.get("batches", p.batches);
  s.get("goal_bias", p.goal_bias);
  s.get("connection_radius", p.connection_radius);
  s.get("goal_tolerance", p.goal_tolerance);
  s.get("resolution", p.resolution);
  s.get("clearance", p.clearance);
  s.get("shortcut_iterations", p.shortcut_iterations);
  s.finish();
}

inline void read_rl(const json& j, rl::RLHyperparams& hp) {
  Section s(j, "rl");
  s.get("ensemble_size", hp.ensemble_size);
  s.get("critic_updates", hp.critic_updates);
  s.get("update_every", hp.update_every);
  s.get("exploration_std", hp.exploration_std);
  s.get("target_noise_std", hp.target_noise_std);
  s.get("noise_clip", hp.noise_clip);
  s.get("gamma", hp.gamma);
  s.get("tau", hp.tau);
  s.get("batch_size", hp.batch_size);
  s.get("actor_lr", hp.actor_lr);
  s.get("critic_lr", hp.critic_lr);
  s.get("total_steps", hp.total_steps);
  s.get("policy_delay", hp.policy_delay);
  s.get("buffer_capacity", hp.buffer_capacity);
  s.get("hidden", hp.hidden);
  s.get("actor_uses_pair_min", hp.actor_uses_pair_min);
  s.get("demo_sample_ratio", hp.demo_sample_ratio);
  s.finish();
}

inline void read_agent(const json& j, agent::AgentConfig& a) {
  Section s(j, "agent");
  s.get("distance_threshold", a.distance_threshold);
  s.get("hysteresis_factor", a.hysteresis_factor);
  s.get("replan_deviation", a.replan_deviation);
  if (s.has("force_mode") && !s.at("force_mode").is_null()) a.force_mode = s.at("force_mode").get<int>();
  s.get("disable_bc", a.disable_bc);
  s.get("critic_scale", a.critic_scale);
  s.get("count_interaction_only", a.count_interaction_only);
  s.get("store_nav_transitions", a.store_nav_transitions);
  if (s.has("train_randomization"))
    a.train_randomization = env::parse_randomization(s.at("train_randomization").get<std::string>());
  s.finish();
}

inline void read_bc(const json& j, BCConfig& c) {
  Section s(j, "bc");
  s.get("epochs", c.epochs);
  s.get("lr", c.lr);
  s.get("batch_size", c.batch_size);
  s.get("hidden", c.hidden);
  s.finish();
  if (c.epochs < 0 || !(c.lr > 0) || c.batch_size < 1) throw Error(ErrorCode::config, "invalid bc settings");
}

inline void read_heads(const json& j, modes::HeadConfig& c) {
  Section s(j, "heads");
  s.get("epochs", c.epochs);
  s.get("lr", c.lr);
  s.get("batch_size", c.batch_size);
  s.get("hidden", c.hidden);
  s.get("holdout_fraction", c.holdout_fraction);
  s.finish();
  if (c.epochs < 0 || !(c.lr > 0) || c.batch_size < 1 || !(c.holdout_fraction > 0 && c.holdout_fraction < 1))
    throw Error(ErrorCode::config, "invalid heads settings");
}

inline void read_supervision(const json& j, modes::SupervisionConfig& c) {
  Section s(j, "supervision");
  s.get("samples", c.samples);
  s.get("d_thresh", c.d_thresh);
  s.get("h_offset", c.h_offset);
  s.get("random_rollout_fraction", c.random_rollout_fraction);
  s.get("expert_noise", c.expert_noise);
  s.get("min_positive", c.min_positive);
  s.get("max_positive", c.max_positive);
  s.finish();
  if (c.samples < 1) throw Error(ErrorCode::config, "supervision.samples must be >= 1");
}

inline void read_demos(const json& j, DemoSettings& d) {
  Section s(j, "demos");
  s.get("count", d.count);
  if (s.has("seed")) d.seed = s.at("seed").get<std::uint64_t>();
  if (s.has("randomization")) d.randomization = env::parse_randomization(s.at("randomization").get<std::string>());
  s.get("noise_std", d.expert.noise_std);
  s.get("gain", d.expert.gain);
  s.finish();
  if (d.count < 1) throw Error(ErrorCode::config, "demos.count must be >= 1");
}

inline void read_eval(const json& j, EvalSettings& e) {
  Section s(j, "eval");
  s.get("episodes", e.episodes);
  if (s.has("protocols")) {
    e.protocols.clear();
    for (const auto& p : s.at("protocols")) e.protocols.push_back(env::parse_randomization(p.get<std::string>()));
  }
  s.get("curve_every", e.curve_every);
  s.get("curve_episodes", e.curve_episodes);
  s.finish();
  if (e.episodes < 1 || e.curve_every < 0 || e.curve_episodes < 1) throw Error(ErrorCode::config, "invalid eval settings");
}

inline void read_artifacts(const json& j, ArtifactPaths& a, const fs::path& base) {
  Section s(j, "artifacts");
  auto path = [&](const char* key, std::optional<fs::path>& out) {
    if (!s.has(key)) return;
    fs::path p = s.at(key).get<std::string>();
    out = p.is_absolute() ? p : base / p;
  };
  path("demos", a.demos);
  path("bc", a.bc);
  path("modenet", a.modenet);
  path("navnet", a.navnet);
  s.finish();
}

}  // namespace detail

/// Parses and validates an experiment config. Relative artifact paths are
/// resolved against base_dir. Unknown keys are errors.
inline ExperimentConfig config_from_json(const json& j, const fs::path& base_dir = {}) {
  ExperimentConfig c;
  try {
    detail::Section s(j, "config");
    int schema = 1;
    s.get("schema", schema);
    if (schema != 1) throw Error(ErrorCode::config, "unsupported config schema " + std::to_string(schema));
    std::string task = "ReachLift";
    s.get("task", task);
    c.world = env::default_world(env::parse_task(task));
    if (s.has("world")) {
      json w = s.at("world");
      if (!w.is_object()) throw Error(ErrorCode::config, "config.world must be a JSON object");
      if (!w.contains("task")) w["task"] = task;
      if (w["task"] != task) throw Error(ErrorCode::config, "config.world.task disagrees with config.task");
      c.world = env::world_from_json(w);
    }
    if (s.has("variant")) c.agent.variant = agent::parse_variant(s.at("variant").get<std::string>());
    if (s.has("variants")) {
      c.variants.clear();
      for (const auto& v : s.at("variants")) c.variants.push_back(agent::parse_variant(v.get<std::string>()));
    }
    s.get("seeds", c.seeds);
    s.get("interval", c.agent.interval);
    if (s.has("output_dir")) c.output_dir = s.at("output_dir").get<std::string>();
    if (s.has("demos")) detail::read_demos(s.at("demos"), c.demos);
    if (s.has("bc")) detail::read_bc(s.at("bc"), c.bc);
    if (s.has("supervision")) detail::read_supervision(s.at("supervision"), c.supervision);
    if (s.has("heads")) detail::read_heads(s.at("heads"), c.heads);
    if (s.has("planner")) detail::read_planner(s.at("planner"), c.agent.planner);
    if (s.has("rl")) detail::read_rl(s.at("rl"), c.agent.rl);
    if (s.has("agent")) detail::read_agent(s.at("agent"), c.agent);
    if (s.has("eval")) detail::read_eval(s.at("eval"), c.eval);
    if (s.has("artifacts")) detail::read_artifacts(s.at("artifacts"), c.artifacts, base_dir);
    s.get("decision_log", c.decision_log);
    s.get("jobs", c.jobs);
    if (s.has("complexity_g"))
      c.warnings.push_back("config.complexity_g is accepted for compatibility and has no effect");
    s.finish();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("malformed config: ") + e.what());
  }
  if (c.seeds.empty()) throw Error(ErrorCode::config, "config.seeds must not be empty");
  if (c.variants.empty()) throw Error(ErrorCode::config, "config.variants must not be empty");
  if (c.jobs < 1) throw Error(ErrorCode::config, "config.jobs must be >= 1");
  if (c.demos.count > 0 && c.bc.hidden.empty()) throw Error(ErrorCode::config, "bc.hidden must not be empty");
  c.agent.validate();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open config: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, "config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Supervised models

struct PreparedModels {
  std::optional<expert::DemoDataset> demos;
  agent::Models models;
  std::optional<modes::ModeNetReport> modenet_report;
  std::optional<modes::NavNetReport> navnet_report;
};

/// Loads or trains what the variant needs. Every generated piece is seeded
/// from the run seed unless the config pins a seed.
inline PreparedModels prepare_models(const ExperimentConfig& cfg, agent::Variant variant, std::uint64_t seed) {
  PreparedModels p;
  agent::AgentConfig ac = cfg.agent;
  ac.variant = variant;
  if (ac.has_bc()) {
    if (cfg.artifacts.demos)
      p.demos = expert::load_demos(*cfg.artifacts.demos);
    else
      p.demos = expert::generate_demos(cfg.world, cfg.demos.count, cfg.demos.seed.value_or(seed),
                                       cfg.demos.randomization, cfg.demos.expert);
    if (cfg.artifacts.bc) {
      p.models.bc = load_bc(*cfg.artifacts.bc);
    } else {
      BCConfig bc = cfg.bc;
      bc.seed = seed;
      p.models.bc = train_bc(*p.demos, bc).policy;
    }
  }
  if (agent::uses_gate(variant)) {
    const bool need_modenet = !cfg.artifacts.modenet;
    const bool need_navnet = !cfg.artifacts.navnet;
    std::optional<modes::LabeledDataset> labels;
    if (need_modenet || need_navnet) labels = modes::build_supervision_set(cfg.world, cfg.supervision, seed);
    modes::HeadConfig hc = cfg.heads;
    hc.seed = seed;
    if (need_modenet) {
      auto r = modes::train_modenet(*labels, hc);
      p.models.modenet = std::move(r.model);
      p.modenet_report = r.report;
    } else {
      p.models.modenet = modes::load_modenet(*cfg.artifacts.modenet);
    }
    if (need_navnet) {
      auto r = modes::train_navnet(*labels, cfg.world, hc);
      p.models.navnet = std::move(r.model);
      p.navnet_report = r.report;
    } else {
      p.models.navnet = modes::load_navnet(*cfg.artifacts.navnet);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// CSV files. Each starts with a "# <kind> v<version>" line; readers refuse
// other versions.

inline constexpr int kCsvVersion = 1;
inline constexpr const char* kMetricsKind = "planrl-metrics";
inline constexpr const char* kEvalKind = "planrl-eval";
inline constexpr const char* kAggregateKind = "planrl-aggregate";

inline constexpr const char* kMetricsColumns =
    "step,seed,variant,task,protocol,success_rate,episodes,il_fraction,rl_fraction,nav_fraction,planner_failures,"
    "mean_episode_length,mean_return";
inline constexpr const char* kEvalColumns = "variant,task,seed,protocol,episodes,success_rate";
inline constexpr const char* kAggregateColumns =
    "variant,task,protocol,step,n,success_mean,success_std,il_fraction_mean,il_fraction_std,nav_fraction_mean,"
    "nav_fraction_std";

inline std::string csv_header(const char* kind, const char* columns) {
  return std::string("# ") + kind + " v" + std::to_string(kCsvVersion) + "\n" + columns + "\n";
}

inline std::string num(double v) { return expert::detail::fmt(v); }

/// One metrics row: training intervals use protocol "train"; mid-training
/// evaluations fill only step, seed, variant, task, protocol, success_rate
/// and episodes.
struct MetricsRow {
  long long step = 0;
  std::uint64_t seed = 0;
  std::string variant, task, protocol = "train";
  double success_rate = 0.0;
  long long episodes = 0;
  double il_fraction = 0.0, rl_fraction = 0.0, nav_fraction = 0.0;
  long long planner_failures = 0;
  double mean_episode_length = 0.0, mean_return = 0.0;
};

inline std::string metrics_line(const MetricsRow& r) {
  std::ostringstream os;
  os << r.step << ',' << r.seed << ',' << r.variant << ',' << r.task << ',' << r.protocol << ',' << num(r.success_rate)
     << ',' << r.episodes << ',' << num(r.il_fraction) << ',' << num(r.rl_fraction) << ',' << num(r.nav_fraction) << ','
     << r.planner_failures << ',' << num(r.mean_episode_length) << ',' << num(r.mean_return) << '\n';
  return os.str();
}

namespace detail {

inline std::vector<std::string> read_csv_body(std::istream& is, const char* kind, const char* columns,
                                              const std::string& what) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::format, what + ": empty file");
  const std::string expected = std::string("# ") + kind + " v" + std::to_string(kCsvVersion);
  if (line.rfind(std::string("# ") + kind + " v", 0) != 0) throw Error(ErrorCode::format, what + ": not a " + kind + " file");
  if (line != expected) throw Error(ErrorCode::format, what + ": unsupported version '" + line + "', expected '" + expected + "'");
  if (!std::getline(is, line) || line != columns) throw Error(ErrorCode::format, what + ": unexpected column header");
  std::vector<std::string> rows;
  while (std::getline(is, line))
    if (!line.empty()) rows.push_back(line);
  return rows;
}

}  // namespace detail

inline std::vector<MetricsRow> read_metrics(std::istream& is, const std::string& what = "metrics") {
  std::vector<MetricsRow> out;
  for (const auto& line : detail::read_csv_body(is, kMetricsKind, kMetricsColumns, what)) {
    const auto f = expert::detail::split(line);
    if (f.size() != 13) throw Error(ErrorCode::format, what + ": expected 13 fields");
    MetricsRow r;
    r.step = expert::detail::parse_int(f[0]);
    r.seed = expert::detail::parse_u64(f[1]);
    r.variant = f[2];
    r.task = f[3];
    r.protocol = f[4];
    r.success_rate = expert::detail::parse_double(f[5]);
    r.episodes = expert::detail::parse_int(f[6]);
    r.il_fraction = expert::detail::parse_double(f[7]);
    r.rl_fraction = expert::detail::parse_double(f[8]);
    r.nav_fraction = expert::detail::parse_double(f[9]);
    r.planner_failures = expert::detail::parse_int(f[10]);
    r.mean_episode_length = expert::detail::parse_double(f[11]);
    r.mean_return = expert::detail::parse_double(f[12]);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<MetricsRow> load_metrics(const fs::path& path) {
  auto is = io::open_input(path, false);
  return read_metrics(is, path.string());
}

struct EvalRow {
  std::string variant, task;
  std::uint64_t seed = 0;
  std::string protocol;
  int episodes = 0;
  double success_rate = 0.0;
};

inline std::string eval_line(const EvalRow& r) {
  return r.variant + ',' + r.task + ',' + std::to_string(r.seed) + ',' + r.protocol + ',' + std::to_string(r.episodes) +
         ',' + num(r.success_rate) + '\n';
}

inline std::vector<EvalRow> read_eval(std::istream& is, const std::string& what = "eval") {
  std::vector<EvalRow> out;
  for (const auto& line : detail::read_csv_body(is, kEvalKind, kEvalColumns, what)) {
    const auto f = expert::detail::split(line);
    if (f.size() != 6) throw Error(ErrorCode::format, what + ": expected 6 fields");
    out.push_back(EvalRow{f[0], f[1], expert::detail::parse_u64(f[2]), f[3],
                          static_cast<int>(expert::detail::parse_int(f[4])), expert::detail::parse_double(f[5])});
  }
  return out;
}

inline std::vector<EvalRow> load_eval(const fs::path& path) {
  auto is = io::open_input(path, false);
  return read_eval(is, path.string());
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  io::write_file_atomic(path, [&](std::ostream& os) { os << text; }, false);
}

// ---------------------------------------------------------------------------
// Runs

struct RunOutput {
  std::vector<MetricsRow> rows;  // training intervals then evaluation points, in emission order
  std::vector<EvalRow> final_eval;
  agent::RunMetrics metrics;
  double final_train_success = 0.0;
};

inline agent::TrainResult run_training(const ExperimentConfig& cfg, agent::Variant variant, std::uint64_t seed,
                                       const PreparedModels& prepared, RunOutput& out, std::ostream* decision_log) {
  agent::AgentConfig ac = cfg.agent;
  ac.variant = variant;
  const std::string vname(agent::to_string(variant));
  const std::string tname(env::to_string(cfg.world.task));
  agent::TrainHooks hooks;
  hooks.decision_log = decision_log;
  int interval_index = 0;
  hooks.on_interval = [&](const agent::IntervalMetrics& m, const rl::Learner& learner) {
    MetricsRow r;
    r.step = m.step;
    r.seed = seed;
    r.variant = vname;
    r.task = tname;
    r.success_rate = m.success_rate;
    r.episodes = m.episodes;
    r.il_fraction = m.il_fraction;
    r.rl_fraction = m.rl_fraction;
    r.nav_fraction = m.nav_fraction;
    r.planner_failures = m.planner_failures;
    r.mean_episode_length = m.mean_episode_length;
    r.mean_return = m.mean_return;
    out.rows.push_back(r);
    ++interval_index;
    if (cfg.eval.curve_every > 0 && interval_index % cfg.eval.curve_every == 0) {
      const agent::Bundle snapshot{cfg.world, ac, prepared.models, learner};
      for (auto protocol : cfg.eval.protocols) {
        MetricsRow e;
        e.step = m.step;
        e.seed = seed;
        e.variant = vname;
        e.task = tname;
        e.protocol = std::string(env::to_string(protocol));
        e.episodes = cfg.eval.curve_episodes;
        e.success_rate =
            agent::evaluate(snapshot, protocol, cfg.eval.curve_episodes, splitmix64(seed ^ static_cast<std::uint64_t>(m.step)));
        out.rows.push_back(e);
      }
    }
  };
  auto result = agent::train(cfg.world, ac, prepared.models, prepared.demos ? &*prepared.demos : nullptr, seed, hooks);
  out.metrics = result.metrics;
  if (!result.metrics.intervals.empty()) out.final_train_success = result.metrics.intervals.back().success_rate;
  return result;
}

/// One (variant, seed) run with outputs under dir: metrics.csv, eval.csv,
/// bundle.bin and, when enabled, decisions.csv.
inline RunOutput run_single(const ExperimentConfig& cfg, agent::Variant variant, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  const auto prepared = prepare_models(cfg, variant, seed);
  RunOutput out;
  std::ostringstream log;
  auto result = run_training(cfg, variant, seed, prepared, out, cfg.decision_log ? &log : nullptr);
  agent::AgentConfig ac = cfg.agent;
  ac.variant = variant;
  const agent::Bundle bundle{cfg.world, ac, prepared.models, result.learner};
  for (auto protocol : cfg.eval.protocols)
    out.final_eval.push_back(EvalRow{std::string(agent::to_string(variant)), std::string(env::to_string(cfg.world.task)),
                                     seed, std::string(env::to_string(protocol)), cfg.eval.episodes,
                                     agent::evaluate(bundle, protocol, cfg.eval.episodes, seed)});
  std::string metrics = csv_header(kMetricsKind, kMetricsColumns);
  for (const auto& r : out.rows) metrics += metrics_line(r);
  write_text_atomic(dir / "metrics.csv", metrics);
  std::string eval = csv_header(kEvalKind, kEvalColumns);
  for (const auto& r : out.final_eval) eval += eval_line(r);
  write_text_atomic(dir / "eval.csv", eval);
  agent::save_bundle(dir / "bundle.bin", bundle);
  if (cfg.decision_log) write_text_atomic(dir / "decisions.csv", log.str());
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateRow {
  std::string variant, task, protocol;
  long long step = 0;
  int n = 0;
  double success_mean = 0.0, success_std = 0.0;
  double il_mean = 0.0, il_std = 0.0, nav_mean = 0.0, nav_std = 0.0;
};

/// Population mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// Groups rows by (variant, task, protocol, step) across seeds.
inline std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows) {
  struct Acc {
    std::vector<double> success, il, nav;
  };
  std::map<std::tuple<std::string, std::string, std::string, long long>, Acc> groups;
  for (const auto& r : rows) {
    auto& a = groups[{r.variant, r.task, r.protocol, r.step}];
    a.success.push_back(r.success_rate);
    a.il.push_back(r.il_fraction);
    a.nav.push_back(r.nav_fraction);
  }
  std::vector<AggregateRow> out;
  for (const auto& [key, a] : groups) {
    AggregateRow r;
    std::tie(r.variant, r.task, r.protocol, r.step) = key;
    r.n = static_cast<int>(a.success.size());
    std::tie(r.success_mean, r.success_std) = mean_std(a.success);
    std::tie(r.il_mean, r.il_std) = mean_std(a.il);
    std::tie(r.nav_mean, r.nav_std) = mean_std(a.nav);
    out.push_back(r);
  }
  return out;
}

inline std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string s = csv_header(kAggregateKind, kAggregateColumns);
  for (const auto& r : rows)
    s += r.variant + ',' + r.task + ',' + r.protocol + ',' + std::to_string(r.step) + ',' + std::to_string(r.n) + ',' +
         num(r.success_mean) + ',' + num(r.success_std) + ',' + num(r.il_mean) + ',' + num(r.il_std) + ',' +
         num(r.nav_mean) + ',' + num(r.nav_std) + '\n';
  return s;
}

inline std::vector<AggregateRow> read_aggregate(std::istream& is, const std::string& what = "aggregate") {
  std::vector<AggregateRow> out;
  for (const auto& line : detail::read_csv_body(is, kAggregateKind, kAggregateColumns, what)) {
    const auto f = expert::detail::split(line);
    if (f.size() != 11) throw Error(ErrorCode::format, what + ": expected 11 fields");
    AggregateRow r;
    r.variant = f[0];
    r.task = f[1];
    r.protocol = f[2];
    r.step = expert::detail::parse_int(f[3]);
    r.n = static_cast<int>(expert::detail::parse_int(f[4]));
    r.success_mean = expert::detail::parse_double(f[5]);
    r.success_std = expert::detail::parse_double(f[6]);
    r.il_mean = expert::detail::parse_double(f[7]);
    r.il_std = expert::detail::parse_double(f[8]);
    r.nav_mean = expert::detail::parse_double(f[9]);
    r.nav_std = expert::detail::parse_double(f[10]);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<AggregateRow> load_aggregate(const fs::path& path) {
  auto is = io::open_input(path, false);
  return read_aggregate(is, path.string());
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepOutput {
  std::vector<MetricsRow> rows;
  std::vector<EvalRow> eval;
  std::vector<AggregateRow> aggregate;
  std::map<std::pair<std::string, std::uint64_t>, RunOutput> runs;
};

inline fs::path run_dir(const fs::path& root, agent::Variant v, std::uint64_t seed) {
  return root / std::string(agent::to_string(v)) / ("seed-" + std::to_string(seed));
}

/// Every (variant, seed) pair as an isolated run; jobs workers pull from a
/// shared queue. Results are collected in (variant, seed) order, so output
/// files do not depend on scheduling.
inline SweepOutput run_sweep(const ExperimentConfig& cfg, const fs::path& out_dir) {
  std::vector<std::pair<agent::Variant, std::uint64_t>> tasks;
  for (auto v : cfg.variants)
    for (auto s : cfg.seeds) tasks.emplace_back(v, s);
  std::vector<std::optional<RunOutput>> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::mutex m;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(m);
        if (next >= tasks.size()) return;
        i = next++;
      }
      try {
        results[i] = run_single(cfg, tasks[i].first, tasks[i].second, run_dir(out_dir, tasks[i].first, tasks[i].second));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, cfg.jobs));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, tasks.size()); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  SweepOutput out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto& r = *results[i];
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
    out.eval.insert(out.eval.end(), r.final_eval.begin(), r.final_eval.end());
    out.runs.emplace(std::make_pair(std::string(agent::to_string(tasks[i].first)), tasks[i].second), std::move(r));
  }
  out.aggregate = aggregate(out.rows);
  std::string metrics = csv_header(kMetricsKind, kMetricsColumns);
  for (const auto& r : out.rows) metrics += metrics_line(r);
  write_text_atomic(out_dir / "metrics.csv", metrics);
  std::string eval = csv_header(kEvalKind, kEvalColumns);
  for (const auto& r : out.eval) eval += eval_line(r);
  write_text_atomic(out_dir / "eval.csv", eval);
  write_text_atomic(out_dir / "aggregate.csv", aggregate_csv(out.aggregate));
  return out;
}

// ---------------------------------------------------------------------------
// SVG plots

struct Series {
  std::string label;
  std::vector<double> x, mean, stddev;
};

inline std::string svg_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

/// Line chart with a mean +- std band per series; y fixed to [0, 1].
inline std::string svg_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                             const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 60, R = 150, T = 40, B = 50;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double xmax = 1.0;
  for (const auto& s : series)
    for (double x : s.x) xmax = std::max(xmax, x);
  auto px = [&](double x) { return L + (W - L - R) * x / xmax; };
  auto py = [&](double y) { return H - B - (H - T - B) * std::clamp(y, 0.0, 1.0); };
  char buf[128];
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = i / 5.0;
    std::snprintf(buf, sizeof buf, "%.1f", y);
    os << "<line x1=\"" << L - 4 << "\" y1=\"" << py(y) << "\" x2=\"" << W - R << "\" y2=\"" << py(y)
       << "\" stroke=\"#ddd\"/>\n<text x=\"" << L - 8 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
    const double x = xmax * i / 5.0;
    std::snprintf(buf, sizeof buf, "%g", x);
    os << "<text x=\"" << px(x) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << buf << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << svg_escape(x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << svg_escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % 6];
    if (s.x.empty()) continue;
    std::ostringstream band, line;
    for (std::size_t i = 0; i < s.x.size(); ++i) band << px(s.x[i]) << ',' << py(s.mean[i] + s.stddev[i]) << ' ';
    for (std::size_t i = s.x.size(); i-- > 0;) band << px(s.x[i]) << ',' << py(s.mean[i] - s.stddev[i]) << ' ';
    for (std::size_t i = 0; i < s.x.size(); ++i) line << px(s.x[i]) << ',' << py(s.mean[i]) << ' ';
    os << "<polygon points=\"" << band.str() << "\" fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    const double ly = T + 10 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\">" << svg_escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Writes one chart per (variant, protocol) plus one comparison chart per
/// protocol. Returns the files written, sorted.
inline std::vector<fs::path> write_plots(const std::vector<AggregateRow>& rows, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::map<std::string, std::map<std::string, Series>> by_protocol;  // protocol -> variant -> series
  std::vector<AggregateRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a.protocol, a.variant, a.step) < std::tie(b.protocol, b.variant, b.step);
  });
  std::string task;
  for (const auto& r : sorted) {
    auto& s = by_protocol[r.protocol][r.variant];
    s.label = r.variant;
    s.x.push_back(static_cast<double>(r.step));
    s.mean.push_back(r.success_mean);
    s.stddev.push_back(r.success_std);
    task = r.task;
  }
  std::vector<fs::path> written;
  for (const auto& [protocol, variants] : by_protocol) {
    const std::string what = protocol == "train" ? "Training" : "Evaluation (" + protocol + ")";
    std::vector<Series> all;
    for (const auto& [variant, s] : variants) {
      const fs::path file = out_dir / (variant + "_" + protocol + ".svg");
      write_text_atomic(file, svg_chart(task + ": " + what + ", " + variant, "environment steps", "success rate", {s}));
      written.push_back(file);
      all.push_back(s);
    }
    const fs::path file = out_dir / ("compare_" + protocol + ".svg");
    write_text_atomic(file, svg_chart(task + ": " + what, "environment steps", "success rate", all));
    written.push_back(file);
  }
  std::sort(written.begin(), written.end());
  return written;
}

}  // namespace planrl::harness
