#pragma once

// Mode classifier (planning vs. interaction) and waypoint regressor trained
// from rule-generated labels on state vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "planrl/binary_io.hpp"
#include "planrl/env.hpp"
#include "planrl/expert.hpp"
#include "planrl/imitation.hpp"
#include "planrl/rng.hpp"
#include "planrl/tensor.hpp"

namespace planrl::modes {

using env::State;
using env::Vec3;
using env::World;

enum Mode : int { kPlanning = 0, kInteraction = 1 };

inline double default_distance_threshold(const World& world) { return 0.1 * world.diagonal(); }
inline double default_waypoint_offset(const World& world) { return 0.05 * world.height(); }

/// The point the current task phase is working toward: the goal once a
/// pick-and-place object is held, otherwise the object.
inline Vec3 phase_target(const State& s, const World& world) {
  if (world.task == env::TaskId::PickAndPlace && s.held) return s.goal;
  return s.object;
}

inline double phase_distance(const State& s, const World& world) { return (s.gripper - phase_target(s, world)).norm(); }

/// Interaction iff the gripper is within d_thresh (closed) of the phase target.
inline Mode mode_label(const State& s, const World& world, double d_thresh) {
  if (!(d_thresh > 0.0)) throw Error(ErrorCode::invalid_argument, "distance threshold must be positive");
  return phase_distance(s, world) <= d_thresh ? kInteraction : kPlanning;
}

inline Vec3 waypoint_label(const State& s, const World& world, double h_offset) {
  if (!(h_offset > 0.0)) throw Error(ErrorCode::invalid_argument, "waypoint offset must be positive");
  return world.workspace.clamp(phase_target(s, world) + Vec3(0.0, 0.0, h_offset));
}

// ---------------------------------------------------------------------------
// Metrics

struct ClassifierReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Standard definitions. A zero denominator yields 0 unless the class it
/// measures is absent from both predictions and labels, in which case 1.
inline ClassifierReport classifier_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw Error(ErrorCode::invalid_argument, "classifier_metrics on empty input");
  if (predictions.size() != labels.size()) throw Error(ErrorCode::dimension_mismatch, "predictions and labels differ in length");
  ClassifierReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] == kInteraction;
    const bool l = labels[i] == kInteraction;
    if (p && l) ++r.tp;
    else if (p && !l) ++r.fp;
    else if (!p && l) ++r.fn;
    else ++r.tn;
  }
  const auto d = [](std::size_t x) { return static_cast<double>(x); };
  r.accuracy = d(r.tp + r.tn) / d(labels.size());
  r.precision = (r.tp + r.fp) == 0 ? (r.fn == 0 ? 1.0 : 0.0) : d(r.tp) / d(r.tp + r.fp);
  r.recall = (r.tp + r.fn) == 0 ? (r.fp == 0 ? 1.0 : 0.0) : d(r.tp) / d(r.tp + r.fn);
  r.f1 = (r.precision + r.recall) == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

// ---------------------------------------------------------------------------
// Supervision data

struct LabeledDataset {
  env::TaskId task = env::TaskId::ReachLift;
  double d_thresh = 0.0;
  double h_offset = 0.0;
  std::vector<State> states;
  std::vector<int> modes;
  std::vector<Vec3> waypoints;

  std::size_t size() const { return states.size(); }
  double positive_fraction() const {
    if (modes.empty()) return 0.0;
    return static_cast<double>(std::count(modes.begin(), modes.end(), int{kInteraction})) /
           static_cast<double>(modes.size());
  }
};

struct SupervisionConfig {
  int samples = 1500;
  double d_thresh = -1.0;   // <= 0: 10% of the workspace diagonal
  double h_offset = -1.0;   // <= 0: 5% of the workspace height
  double random_rollout_fraction = 0.5;
  double expert_noise = 0.3;
  double min_positive = 0.2;
  double max_positive = 0.8;

  double threshold(const World& w) const { return d_thresh > 0 ? d_thresh : default_distance_threshold(w); }
  double offset(const World& w) const { return h_offset > 0 ? h_offset : default_waypoint_offset(w); }
};

/// States from a mix of noisy-expert and uniform-random rollouts under full
/// object and gripper randomization, labeled by the rules above. When the
/// natural class balance falls outside [min_positive, max_positive] the
/// sample is redrawn from per-class pools at the nearest bound.
inline LabeledDataset build_supervision_set(const World& world, const SupervisionConfig& cfg, std::uint64_t seed) {
  if (cfg.samples < 1) throw Error(ErrorCode::invalid_argument, "sample count must be >= 1");
  const double d_thresh = cfg.threshold(world);
  const double h_offset = cfg.offset(world);
  Rng rng = make_stream(seed, stream::supervised);

  std::vector<State> positives, negatives;
  const auto target_pool = static_cast<std::size_t>(cfg.samples) * 3;
  std::uint64_t episode = 0;
  expert::ExpertConfig ecfg;
  ecfg.noise_std = 0.0;
  while (positives.size() + negatives.size() < target_pool || positives.size() < static_cast<std::size_t>(cfg.samples) ||
         negatives.size() < static_cast<std::size_t>(cfg.samples)) {
    if (episode > 100000) break;
    const std::uint64_t ep_seed = splitmix64(seed * 7919ULL + episode++);
    const State start = env::reset(world, ep_seed, env::Randomization::ObjectAndGripper);
    const bool random_policy = uniform(rng, 0.0, 1.0) < cfg.random_rollout_fraction;
    auto traj = expert::rollout(world, start, [&](const State& s) {
      env::Action a;
      if (random_policy) {
        for (int i = 0; i < env::kActionDim; ++i) a[i] = uniform(rng, -1.0, 1.0);
      } else {
        a = expert::expert_action(s, world, ecfg);
        for (int i = 0; i < 3; ++i) a[i] += normal(rng, 0.0, cfg.expert_noise);
      }
      return a;
    });
    for (const auto& s : traj.states)
      (mode_label(s, world, d_thresh) == kInteraction ? positives : negatives).push_back(s);
  }

  const double natural = static_cast<double>(positives.size()) / static_cast<double>(positives.size() + negatives.size());
  const double fraction = std::clamp(natural, cfg.min_positive, cfg.max_positive);
  auto n_pos = static_cast<std::size_t>(std::llround(fraction * cfg.samples));
  n_pos = std::min(n_pos, positives.size());
  const std::size_t n_neg = std::min(static_cast<std::size_t>(cfg.samples) - n_pos, negatives.size());

  auto draw = [&](std::vector<State>& pool, std::size_t k, std::vector<State>& out) {
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  };
  std::vector<State> chosen;
  draw(positives, n_pos, chosen);
  draw(negatives, n_neg, chosen);
  for (std::size_t i = chosen.size(); i > 1; --i) std::swap(chosen[i - 1], chosen[uniform_index(rng, i)]);

  LabeledDataset ds;
  ds.task = world.task;
  ds.d_thresh = d_thresh;
  ds.h_offset = h_offset;
  for (const auto& s : chosen) {
    ds.states.push_back(s);
    ds.modes.push_back(mode_label(s, world, d_thresh));
    ds.waypoints.push_back(waypoint_label(s, world, h_offset));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Models

struct ModeNetModel {
  nn::Mlp net;  // normalized observation -> 2 logits
  Normalizer norm;
};

struct NavNetModel {
  nn::Mlp net;  // normalized observation -> waypoint
  Normalizer norm;
};

struct HeadConfig {
  int epochs = 200;
  double lr = 1e-3;
  int batch_size = 64;
  std::vector<int> hidden = {64, 64};
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct ModeNetReport {
  ClassifierReport holdout;
  double final_train_loss = 0.0;
  std::size_t train_size = 0, holdout_size = 0;
};

struct NavNetReport {
  double holdout_mean_error = 0.0;  // mean Euclidean distance to the rule waypoint
  double holdout_max_error = 0.0;
  double final_train_loss = 0.0;
  std::size_t train_size = 0, holdout_size = 0;
};

struct Split {
  std::vector<std::size_t> train, holdout;
};

/// Deterministic shuffle, then the last holdout_fraction goes to held-out.
inline Split split_indices(std::size_t n, double holdout_fraction, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  const auto n_hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
  s.holdout.assign(order.end() - static_cast<std::ptrdiff_t>(n_hold), order.end());
  return s;
}

inline nn::Mat observation_matrix(const std::vector<State>& states, const std::vector<std::size_t>& idx) {
  nn::Mat m(env::kObservationDim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = env::observe(states[idx[j]]);
  return m;
}

inline nn::Mlp make_head(int in, const std::vector<int>& hidden, int out, Rng& rng) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return nn::make_mlp(std::span<const int>(sizes), nn::Activation::relu, nn::Activation::identity, rng);
}

inline nn::Mat softmax_columns(const nn::Mat& logits) {
  nn::Mat p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    const double m = p.col(j).maxCoeff();
    p.col(j) = (p.col(j).array() - m).exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

/// Cross-entropy loss and its gradient with respect to the logits.
inline double cross_entropy(const nn::Mat& logits, const std::vector<int>& labels, nn::Mat* dlogits) {
  const nn::Mat p = softmax_columns(logits);
  double loss = 0.0;
  const double b = static_cast<double>(logits.cols());
  if (dlogits) *dlogits = p / b;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    loss -= std::log(std::max(p(y, j), 1e-300));
    if (dlogits) (*dlogits)(y, j) -= 1.0 / b;
  }
  return loss / b;
}

/// Tie goes to interaction.
inline Mode mode_from_logits(const nn::Vec& logits) {
  return logits[kPlanning] > logits[kInteraction] ? kPlanning : kInteraction;
}

inline nn::Vec mode_logits(const ModeNetModel& m, const State& s) {
  return nn::forward(m.net, m.norm.apply(nn::Vec(env::observe(s))));
}

inline Mode predict_mode(const ModeNetModel& m, const State& s) { return mode_from_logits(mode_logits(m, s)); }

inline double planning_probability(const ModeNetModel& m, const State& s) {
  const nn::Vec l = mode_logits(m, s);
  return softmax_columns(nn::Mat(l))(kPlanning, 0);
}

inline Vec3 predict_waypoint(const NavNetModel& m, const State& s, const World& world) {
  const nn::Vec w = nn::forward(m.net, m.norm.apply(nn::Vec(env::observe(s))));
  return world.workspace.clamp(Vec3(w[0], w[1], w[2]));
}

struct ModeNetTrainResult {
  ModeNetModel model;
  ModeNetReport report;
};

struct NavNetTrainResult {
  NavNetModel model;
  NavNetReport report;
};

inline ModeNetTrainResult train_modenet(const LabeledDataset& ds, const HeadConfig& cfg) {
  if (ds.size() == 0) throw Error(ErrorCode::invalid_argument, "empty supervision dataset");
  const double pos = ds.positive_fraction();
  if (pos == 0.0 || pos == 1.0) throw Error(ErrorCode::single_class_dataset, "mode dataset contains a single class");
  Rng rng = make_stream(cfg.seed, stream::supervised);
  const Split split = split_indices(ds.size(), cfg.holdout_fraction, rng);
  const nn::Mat x_train = observation_matrix(ds.states, split.train);
  std::vector<int> y_train;
  for (auto i : split.train) y_train.push_back(ds.modes[i]);

  ModeNetTrainResult out;
  out.model.norm = Normalizer::fit(x_train);
  out.model.net = make_head(env::kObservationDim, cfg.hidden, 2, rng);
  const nn::Mat xn = out.model.norm.apply(x_train);
  auto adam = nn::AdamState::for_network(out.model.net);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : minibatches(split.train.size(), static_cast<std::size_t>(cfg.batch_size), rng)) {
      std::vector<int> yb;
      for (auto i : idx) yb.push_back(y_train[i]);
      nn::ForwardCache cache;
      const nn::Mat logits = nn::forward_batch(out.model.net, gather_columns(xn, idx), &cache);
      nn::Mat dl;
      cross_entropy(logits, yb, &dl);
      nn::adam_step(adam, out.model.net, nn::backward_batch(out.model.net, cache, dl), cfg.lr);
    }
  }
  out.report.final_train_loss = cross_entropy(nn::forward_batch(out.model.net, xn), y_train, nullptr);
  out.report.train_size = split.train.size();
  out.report.holdout_size = split.holdout.size();
  if (!split.holdout.empty()) {
    std::vector<int> pred, truth;
    for (auto i : split.holdout) {
      pred.push_back(predict_mode(out.model, ds.states[i]));
      truth.push_back(ds.modes[i]);
    }
    out.report.holdout = classifier_metrics(pred, truth);
  }
  return out;
}

inline NavNetTrainResult train_navnet(const LabeledDataset& ds, const World& world, const HeadConfig& cfg) {
  if (ds.size() == 0) throw Error(ErrorCode::invalid_argument, "empty supervision dataset");
  Rng rng = make_stream(cfg.seed, stream::supervised + 100);
  const Split split = split_indices(ds.size(), cfg.holdout_fraction, rng);
  const nn::Mat x_train = observation_matrix(ds.states, split.train);
  nn::Mat y_train(3, static_cast<Eigen::Index>(split.train.size()));
  for (std::size_t j = 0; j < split.train.size(); ++j) y_train.col(static_cast<Eigen::Index>(j)) = ds.waypoints[split.train[j]];

  NavNetTrainResult out;
  out.model.norm = Normalizer::fit(x_train);
  out.model.net = make_head(env::kObservationDim, cfg.hidden, 3, rng);
  const nn::Mat xn = out.model.norm.apply(x_train);
  auto adam = nn::AdamState::for_network(out.model.net);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : minibatches(split.train.size(), static_cast<std::size_t>(cfg.batch_size), rng)) {
      nn::ForwardCache cache;
      const nn::Mat pred = nn::forward_batch(out.model.net, gather_columns(xn, idx), &cache);
      const nn::Mat d = 2.0 * (pred - gather_columns(y_train, idx)) / static_cast<double>(idx.size());
      nn::adam_step(adam, out.model.net, nn::backward_batch(out.model.net, cache, d), cfg.lr);
    }
  }
  out.report.final_train_loss =
      (nn::forward_batch(out.model.net, xn) - y_train).squaredNorm() / static_cast<double>(y_train.cols());
  out.report.train_size = split.train.size();
  out.report.holdout_size = split.holdout.size();
  double sum = 0.0;
  for (auto i : split.holdout) {
    const double e = (predict_waypoint(out.model, ds.states[i], world) - ds.waypoints[i]).norm();
    sum += e;
    out.report.holdout_max_error = std::max(out.report.holdout_max_error, e);
  }
  if (!split.holdout.empty()) out.report.holdout_mean_error = sum / static_cast<double>(split.holdout.size());
  return out;
}

// ---------------------------------------------------------------------------
// Files. Model checkpoints: magic, MLP block, normalizer block.
// Labeled dataset: the demo header/row layout with label columns appended.

inline constexpr std::string_view kModeNetMagic = "PLRLMODE";
inline constexpr std::string_view kNavNetMagic = "PLRLNAV1";

template <typename Model>
void write_head(std::ostream& os, std::string_view magic, const Model& m) {
  io::write_bytes(os, magic);
  nn::write_mlp(os, m.net);
  m.norm.write(os);
}

template <typename Model>
Model read_head(std::istream& is, std::string_view magic) {
  io::expect_magic(is, magic);
  Model m;
  m.net = nn::read_mlp(is);
  m.norm = Normalizer::read(is);
  if (m.norm.mean.size() != m.net.in_dim()) throw Error(ErrorCode::format, "normalizer does not match network input");
  return m;
}

inline void write_modenet(std::ostream& os, const ModeNetModel& m) { write_head(os, kModeNetMagic, m); }
inline ModeNetModel read_modenet(std::istream& is) { return read_head<ModeNetModel>(is, kModeNetMagic); }
inline void write_navnet(std::ostream& os, const NavNetModel& m) { write_head(os, kNavNetMagic, m); }
inline NavNetModel read_navnet(std::istream& is) { return read_head<NavNetModel>(is, kNavNetMagic); }

inline void save_modenet(const std::filesystem::path& p, const ModeNetModel& m) {
  io::write_file_atomic(p, [&](std::ostream& os) { write_modenet(os, m); });
}
inline ModeNetModel load_modenet(const std::filesystem::path& p) {
  auto is = io::open_input(p);
  return read_modenet(is);
}
inline void save_navnet(const std::filesystem::path& p, const NavNetModel& m) {
  io::write_file_atomic(p, [&](std::ostream& os) { write_navnet(os, m); });
}
inline NavNetModel load_navnet(const std::filesystem::path& p) {
  auto is = io::open_input(p);
  return read_navnet(is);
}

inline constexpr const char* kLabelMagic = "PLANRL-LABELS 1";
inline constexpr const char* kLabelColumns = "i,gx,gy,gz,width,ox,oy,oz,goalx,goaly,goalz,held,step,mode,wx,wy,wz";

inline void write_labels(std::ostream& os, const LabeledDataset& ds) {
  using expert::detail::fmt;
  os << kLabelMagic << '\n'
     << "task " << env::to_string(ds.task) << '\n'
     << "d_thresh " << fmt(ds.d_thresh) << '\n'
     << "h_offset " << fmt(ds.h_offset) << '\n'
     << "samples " << ds.size() << '\n'
     << kLabelColumns << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << i << ',';
    expert::detail::write_state(os, ds.states[i]);
    os << ',' << ds.modes[i] << ',' << fmt(ds.waypoints[i].x()) << ',' << fmt(ds.waypoints[i].y()) << ','
       << fmt(ds.waypoints[i].z()) << '\n';
  }
}

inline LabeledDataset read_labels(std::istream& is) {
  using namespace expert::detail;
  std::string line, value;
  if (!std::getline(is, line) || line != kLabelMagic) throw Error(ErrorCode::format, "not a label file (bad magic)");
  LabeledDataset ds;
  expect_line(is, "task", value);
  ds.task = env::parse_task(value);
  expect_line(is, "d_thresh", value);
  ds.d_thresh = parse_double(value);
  expect_line(is, "h_offset", value);
  ds.h_offset = parse_double(value);
  expect_line(is, "samples", value);
  const auto n = parse_int(value);
  if (!std::getline(is, line) || line != kLabelColumns) throw Error(ErrorCode::format, "unexpected column header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 17) throw Error(ErrorCode::format, "label row has " + std::to_string(f.size()) + " fields");
    if (parse_int(f[0]) != static_cast<long long>(ds.size())) throw Error(ErrorCode::format, "label rows out of order");
    ds.states.push_back(read_state(f, 1));
    const auto mode = parse_int(f[13]);
    if (mode != 0 && mode != 1) throw Error(ErrorCode::format, "mode label must be 0 or 1");
    ds.modes.push_back(static_cast<int>(mode));
    ds.waypoints.emplace_back(parse_double(f[14]), parse_double(f[15]), parse_double(f[16]));
  }
  if (static_cast<long long>(ds.size()) != n) throw Error(ErrorCode::format, "sample count does not match header");
  return ds;
}

inline void save_labels(const std::filesystem::path& p, const LabeledDataset& ds) {
  io::write_file_atomic(p, [&](std::ostream& os) { write_labels(os, ds); });
}

inline LabeledDataset load_labels(const std::filesystem::path& p) {
  auto is = io::open_input(p);
  return read_labels(is);
}

}  // namespace planrl::modes
