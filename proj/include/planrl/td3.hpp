#pragma once

// TD3 with an ensemble of E critics. Each target and each arbitration query
// uses the minimum over a random pair of critics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <vector>

#include "planrl/binary_io.hpp"
#include "planrl/env.hpp"
#include "planrl/expert.hpp"
#include "planrl/rng.hpp"
#include "planrl/tensor.hpp"

namespace planrl::rl {

using Obs = Eigen::Matrix<double, env::kObservationDim, 1>;

struct RLHyperparams {
  int ensemble_size = 2;        // E
  int critic_updates = 1;       // G
  int update_every = 2;         // U
  double exploration_std = 0.1;  // sigma
  double target_noise_std = 0.2; // sigma'
  double noise_clip = 0.5;       // c
  double gamma = 0.99;
  double tau = 0.01;
  int batch_size = 256;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  long long total_steps = 30000;  // N
  int policy_delay = 2;
  std::size_t buffer_capacity = 100000;
  std::vector<int> hidden = {64, 64};
  bool actor_uses_pair_min = false;
  double demo_sample_ratio = 0.0;  // 0: uniform over the whole buffer

  void validate() const {
    if (ensemble_size < 2) throw Error(ErrorCode::config, "ensemble size E must be >= 2");
    if (critic_updates < 1 || update_every < 1 || policy_delay < 1 || batch_size < 1)
      throw Error(ErrorCode::config, "G, U, policy delay and batch size must be >= 1");
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorCode::config, "gamma must lie in (0, 1)");
    if (!(noise_clip > 0.0)) throw Error(ErrorCode::config, "noise clip c must be > 0");
    if (!(exploration_std >= 0.0) || !(target_noise_std >= 0.0)) throw Error(ErrorCode::config, "noise std must be >= 0");
    if (!(tau > 0.0 && tau <= 1.0)) throw Error(ErrorCode::config, "tau must lie in (0, 1]");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw Error(ErrorCode::config, "learning rates must be > 0");
    if (total_steps < 0) throw Error(ErrorCode::config, "step budget must be >= 0");
    if (buffer_capacity < 1) throw Error(ErrorCode::config, "buffer capacity must be >= 1");
    if (!(demo_sample_ratio >= 0.0 && demo_sample_ratio <= 1.0))
      throw Error(ErrorCode::config, "demo sample ratio must lie in [0, 1]");
    for (int h : hidden)
      if (h < 1) throw Error(ErrorCode::config, "hidden widths must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Replay buffer

struct Transition {
  Obs obs;
  env::Action action;
  double reward = 0.0;
  Obs next_obs;
  bool done = false;

  friend bool operator==(const Transition& a, const Transition& b) {
    return a.obs == b.obs && a.action == b.action && a.reward == b.reward && a.next_obs == b.next_obs &&
           a.done == b.done;
  }
};

struct Batch {
  nn::Mat obs;       // obs_dim x B
  nn::Mat action;    // 4 x B
  nn::Vec reward;    // B
  nn::Mat next_obs;  // obs_dim x B
  nn::Vec done;      // B, 0 or 1

  Eigen::Index size() const { return obs.cols(); }
};

/// Slots [0, demo_count) hold demonstrations and are never overwritten; the
/// remaining slots form a ring for online transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw Error(ErrorCode::invalid_argument, "buffer capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return data_.size(); }
  std::size_t demo_count() const { return demo_count_; }
  std::size_t online_count() const { return data_.size() - demo_count_; }
  const Transition& at(std::size_t i) const { return data_.at(i); }
  const std::vector<Transition>& contents() const { return data_; }

  void add_demo(const Transition& t) {
    if (online_count() > 0) throw Error(ErrorCode::invalid_argument, "demonstrations must be added before online data");
    if (data_.size() >= capacity_) throw Error(ErrorCode::capacity_exceeded, "demonstrations exceed buffer capacity");
    data_.push_back(t);
    ++demo_count_;
  }

  void add(const Transition& t) {
    if (data_.size() < capacity_) {
      data_.push_back(t);
      return;
    }
    const std::size_t ring = capacity_ - demo_count_;
    if (ring == 0) return;  // buffer is all demonstrations
    data_[demo_count_ + next_ % ring] = t;
    next_ = (next_ + 1) % ring;
  }

  /// Uniform draw with replacement over the whole buffer, or a fixed share
  /// drawn from the demonstration slots when demo_ratio > 0.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng, double demo_ratio = 0.0) const {
    if (data_.empty()) throw Error(ErrorCode::invalid_argument, "sampling from an empty buffer");
    std::vector<std::size_t> idx(n);
    if (demo_ratio > 0.0 && demo_count_ > 0 && online_count() > 0) {
      const auto n_demo = static_cast<std::size_t>(std::llround(demo_ratio * static_cast<double>(n)));
      for (std::size_t i = 0; i < n; ++i)
        idx[i] = i < n_demo ? uniform_index(rng, demo_count_) : demo_count_ + uniform_index(rng, online_count());
    } else {
      for (auto& i : idx) i = uniform_index(rng, data_.size());
    }
    return idx;
  }

  Batch gather(const std::vector<std::size_t>& idx) const {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Batch b{nn::Mat(env::kObservationDim, n), nn::Mat(env::kActionDim, n), nn::Vec(n), nn::Mat(env::kObservationDim, n),
            nn::Vec(n)};
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& t = data_[idx[static_cast<std::size_t>(j)]];
      b.obs.col(j) = t.obs;
      b.action.col(j) = t.action;
      b.reward[j] = t.reward;
      b.next_obs.col(j) = t.next_obs;
      b.done[j] = t.done ? 1.0 : 0.0;
    }
    return b;
  }

  Batch sample(std::size_t n, Rng& rng, double demo_ratio = 0.0) const {
    return gather(sample_indices(n, rng, demo_ratio));
  }

  friend bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
    return a.capacity_ == b.capacity_ && a.demo_count_ == b.demo_count_ && a.next_ == b.next_ && a.data_ == b.data_;
  }

  void write(std::ostream& os) const;
  static ReplayBuffer read(std::istream& is);

 private:
  std::size_t capacity_;
  std::size_t demo_count_ = 0;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

/// The buffer stores done only for true task success; a time-limit cut
/// still bootstraps.
inline void seed_buffer(ReplayBuffer& buffer, const expert::DemoDataset& demos) {
  if (demos.transition_count() == 0) throw Error(ErrorCode::invalid_argument, "no demonstrations to seed");
  if (buffer.size() + demos.transition_count() > buffer.capacity())
    throw Error(ErrorCode::capacity_exceeded, "demonstrations exceed buffer capacity");
  for (const auto& tr : demos.trajectories) {
    for (std::size_t t = 0; t < tr.size(); ++t) {
      const auto& next = t + 1 < tr.size() ? tr.states[t + 1] : tr.final_state;
      const bool last = t + 1 == tr.size();
      buffer.add_demo(Transition{env::observe(tr.states[t]), tr.actions[t], tr.rewards[t], env::observe(next),
                                 last && tr.success});
    }
  }
}

// ---------------------------------------------------------------------------
// Networks

struct PolicyNet {
  nn::Mlp online;  // obs -> action, tanh output
  nn::Mlp target;
};

struct CriticEnsemble {
  std::vector<nn::Mlp> online;  // obs||action -> scalar
  std::vector<nn::Mlp> target;

  int size() const { return static_cast<int>(online.size()); }
};

inline nn::Mat concat_rows(const nn::Mat& a, const nn::Mat& b) {
  nn::Mat out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

/// One value per column.
inline nn::Vec q_values(const nn::Mlp& critic, const nn::Mat& obs, const nn::Mat& actions) {
  return nn::forward_batch(critic, concat_rows(obs, actions)).row(0).transpose();
}

inline double q_value(const nn::Mlp& critic, const Obs& obs, const env::Action& a) {
  return q_values(critic, nn::Mat(obs), nn::Mat(a))[0];
}

inline env::Action policy_action(const PolicyNet& p, const Obs& obs) { return nn::forward(p.online, obs); }

/// pi(s) + N(0, sigma^2) per dimension, clipped to [-1, 1]. sigma = 0 is
/// deterministic and draws nothing.
inline env::Action explore_action(const PolicyNet& p, const Obs& obs, double sigma, Rng& rng) {
  env::Action a = policy_action(p, obs);
  if (sigma > 0.0)
    for (int i = 0; i < env::kActionDim; ++i) a[i] += normal(rng, 0.0, sigma);
  return env::clip_action(a);
}

/// Two distinct indices drawn uniformly from [0, E).
inline std::array<int, 2> sample_pair(int ensemble_size, Rng& rng) {
  if (ensemble_size < 2) throw Error(ErrorCode::invalid_argument, "pair sampling needs E >= 2");
  const auto e = static_cast<std::size_t>(ensemble_size);
  const auto i = static_cast<int>(uniform_index(rng, e));
  auto j = static_cast<int>(uniform_index(rng, e - 1));
  if (j >= i) ++j;
  return {i, j};
}

inline double pair_min_q(const CriticEnsemble& c, std::array<int, 2> k, const Obs& obs, const env::Action& a) {
  return std::min(q_value(c.online[static_cast<std::size_t>(k[0])], obs, a),
                  q_value(c.online[static_cast<std::size_t>(k[1])], obs, a));
}

/// Smoothing noise: per entry N(0, sigma'^2) clipped to [-c, c]. Drawn
/// column by column.
inline nn::Mat smoothing_noise(Eigen::Index cols, double sigma, double clip, Rng& rng) {
  nn::Mat eps = nn::Mat::Zero(env::kActionDim, cols);
  if (sigma > 0.0)
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < env::kActionDim; ++i) eps(i, j) = std::clamp(normal(rng, 0.0, sigma), -clip, clip);
  return eps;
}

/// y = r + (1 - done) * gamma * min_{i in K} Q'_i(s', clip(pi'(s') + eps)),
/// with eps supplied by the caller (already clipped to [-c, c]).
inline nn::Vec td_target_with_noise(const Batch& b, const nn::Mlp& policy_target, const std::vector<nn::Mlp>& critic_targets,
                                    std::array<int, 2> k, double gamma, const nn::Mat& eps) {
  for (int i : k)
    if (i < 0 || i >= static_cast<int>(critic_targets.size()))
      throw Error(ErrorCode::invalid_argument, "critic index out of range");
  if (k[0] == k[1]) throw Error(ErrorCode::invalid_argument, "critic pair indices must differ");
  const nn::Mat next_a = (nn::forward_batch(policy_target, b.next_obs) + eps).cwiseMax(-1.0).cwiseMin(1.0);
  const nn::Vec q0 = q_values(critic_targets[static_cast<std::size_t>(k[0])], b.next_obs, next_a);
  const nn::Vec q1 = q_values(critic_targets[static_cast<std::size_t>(k[1])], b.next_obs, next_a);
  const nn::Vec not_done = nn::Vec::Ones(b.size()) - b.done;
  return b.reward + gamma * not_done.cwiseProduct(q0.cwiseMin(q1));
}

inline nn::Vec td_target(const Batch& b, const nn::Mlp& policy_target, const std::vector<nn::Mlp>& critic_targets,
                         std::array<int, 2> k, double gamma, double sigma, double clip, Rng& rng) {
  return td_target_with_noise(b, policy_target, critic_targets, k, gamma, smoothing_noise(b.size(), sigma, clip, rng));
}

/// Mean squared TD error of one critic against fixed targets.
inline double critic_loss(const nn::Mlp& critic, const Batch& b, const nn::Vec& y) {
  return (q_values(critic, b.obs, b.action) - y).squaredNorm() / static_cast<double>(b.size());
}

inline nn::Gradients critic_gradient(const nn::Mlp& critic, const Batch& b, const nn::Vec& y) {
  nn::ForwardCache cache;
  const nn::Mat q = nn::forward_batch(critic, concat_rows(b.obs, b.action), &cache);
  const nn::Mat dq = 2.0 * (q - y.transpose()) / static_cast<double>(b.size());
  return nn::backward_batch(critic, cache, dq);
}

/// L(theta) = -mean Q(s, pi(s)), with Q a single critic or the pair minimum.
inline double actor_loss(const nn::Mlp& actor, const std::vector<const nn::Mlp*>& critics, const nn::Mat& obs) {
  const nn::Mat a = nn::forward_batch(actor, obs);
  nn::Vec q = q_values(*critics.front(), obs, a);
  for (std::size_t i = 1; i < critics.size(); ++i) q = q.cwiseMin(q_values(*critics[i], obs, a));
  return -q.mean();
}

/// Gradient of actor_loss with respect to actor parameters only; critics
/// are read, never modified. With a pair minimum, each sample's gradient
/// flows through whichever critic is smaller there (first on ties).
inline nn::Gradients actor_gradient(const nn::Mlp& actor, const std::vector<const nn::Mlp*>& critics, const nn::Mat& obs) {
  nn::ForwardCache actor_cache;
  const nn::Mat a = nn::forward_batch(actor, obs, &actor_cache);
  const nn::Mat sa = concat_rows(obs, a);
  const auto n = obs.cols();
  std::vector<nn::ForwardCache> caches(critics.size());
  std::vector<nn::Vec> qs;
  for (std::size_t i = 0; i < critics.size(); ++i)
    qs.push_back(nn::forward_batch(*critics[i], sa, &caches[i]).row(0).transpose());
  nn::Mat da = nn::Mat::Zero(env::kActionDim, n);
  for (std::size_t i = 0; i < critics.size(); ++i) {
    nn::Mat dq = nn::Mat::Zero(1, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      std::size_t arg = 0;
      for (std::size_t m = 1; m < critics.size(); ++m)
        if (qs[m][j] < qs[arg][j]) arg = m;
      if (arg == i) dq(0, j) = -1.0 / static_cast<double>(n);
    }
    if (dq.isZero()) continue;
    nn::Mat dinput;
    nn::backward_batch(*critics[i], caches[i], dq, &dinput);
    da += dinput.bottomRows(env::kActionDim);
  }
  return nn::backward_batch(actor, actor_cache, da);
}

// ---------------------------------------------------------------------------
// Learner

struct UpdateDiagnostics {
  long long update_index = 0;  // 1-based count of update() calls
  std::vector<std::array<int, 2>> target_pairs;  // one pair per critic step
  std::vector<double> critic_loss;               // mean over critics, before each step
  bool actor_updated = false;
  double actor_loss = 0.0;
};

/// Append-only diagnostics channel; producers and a draining reader may
/// live on different threads.
class DiagnosticsChannel {
 public:
  void push(UpdateDiagnostics d) {
    std::lock_guard lock(mutex_);
    items_.push_back(std::move(d));
  }
  std::vector<UpdateDiagnostics> drain() {
    std::lock_guard lock(mutex_);
    std::vector<UpdateDiagnostics> out;
    out.swap(items_);
    return out;
  }

 private:
  std::mutex mutex_;
  std::vector<UpdateDiagnostics> items_;
};

struct Learner {
  RLHyperparams hp;
  PolicyNet actor;
  CriticEnsemble critics;
  nn::AdamState actor_adam;
  std::vector<nn::AdamState> critic_adam;
  long long updates = 0;         // update() calls
  long long critic_steps = 0;    // individual critic minibatch steps
  Rng replay_rng;
  Rng target_noise_rng;

  friend bool operator==(const Learner& a, const Learner& b) {
    return a.actor.online == b.actor.online && a.actor.target == b.actor.target &&
           a.critics.online == b.critics.online && a.critics.target == b.critics.target && a.updates == b.updates &&
           a.critic_steps == b.critic_steps && a.replay_rng == b.replay_rng && a.target_noise_rng == b.target_noise_rng;
  }
};

inline Learner make_learner(const RLHyperparams& hp, std::uint64_t seed) {
  hp.validate();
  Learner l;
  l.hp = hp;
  Rng actor_rng = make_stream(seed, stream::actor_init);
  Rng critic_rng = make_stream(seed, stream::critic_init);
  std::vector<int> actor_sizes{env::kObservationDim};
  actor_sizes.insert(actor_sizes.end(), hp.hidden.begin(), hp.hidden.end());
  actor_sizes.push_back(env::kActionDim);
  l.actor.online = nn::make_mlp(std::span<const int>(actor_sizes), nn::Activation::relu, nn::Activation::tanh, actor_rng);
  l.actor.target = l.actor.online;
  std::vector<int> critic_sizes{env::kObservationDim + env::kActionDim};
  critic_sizes.insert(critic_sizes.end(), hp.hidden.begin(), hp.hidden.end());
  critic_sizes.push_back(1);
  for (int e = 0; e < hp.ensemble_size; ++e) {
    l.critics.online.push_back(
        nn::make_mlp(std::span<const int>(critic_sizes), nn::Activation::relu, nn::Activation::identity, critic_rng));
    l.critics.target.push_back(l.critics.online.back());
    l.critic_adam.push_back(nn::AdamState::for_network(l.critics.online.back()));
  }
  l.actor_adam = nn::AdamState::for_network(l.actor.online);
  l.replay_rng = make_stream(seed, stream::replay);
  l.target_noise_rng = make_stream(seed, stream::target_noise);
  return l;
}

/// G critic steps; after every policy_delay-th critic step, one actor step
/// followed by EMA of all targets.
inline UpdateDiagnostics update(Learner& l, const ReplayBuffer& buffer) {
  const auto& hp = l.hp;
  if (buffer.size() < static_cast<std::size_t>(hp.batch_size))
    throw Error(ErrorCode::invalid_argument, "buffer holds fewer transitions than one batch");
  UpdateDiagnostics diag;
  diag.update_index = ++l.updates;
  for (int g = 0; g < hp.critic_updates; ++g) {
    const Batch b = buffer.sample(static_cast<std::size_t>(hp.batch_size), l.replay_rng, hp.demo_sample_ratio);
    const auto k = sample_pair(hp.ensemble_size, l.target_noise_rng);
    const nn::Vec y = td_target(b, l.actor.target, l.critics.target, k, hp.gamma, hp.target_noise_std, hp.noise_clip,
                                l.target_noise_rng);
    double loss = 0.0;
    for (std::size_t e = 0; e < l.critics.online.size(); ++e) {
      loss += critic_loss(l.critics.online[e], b, y);
      nn::adam_step(l.critic_adam[e], l.critics.online[e], critic_gradient(l.critics.online[e], b, y), hp.critic_lr);
    }
    diag.target_pairs.push_back(k);
    diag.critic_loss.push_back(loss / static_cast<double>(l.critics.online.size()));
    ++l.critic_steps;

    if (l.critic_steps % hp.policy_delay == 0) {
      std::vector<const nn::Mlp*> qs{&l.critics.online[0]};
      if (hp.actor_uses_pair_min) {
        const auto ka = sample_pair(hp.ensemble_size, l.target_noise_rng);
        qs = {&l.critics.online[static_cast<std::size_t>(ka[0])], &l.critics.online[static_cast<std::size_t>(ka[1])]};
      }
      diag.actor_loss = actor_loss(l.actor.online, qs, b.obs);
      nn::adam_step(l.actor_adam, l.actor.online, actor_gradient(l.actor.online, qs, b.obs), hp.actor_lr);
      diag.actor_updated = true;
      nn::ema_update(l.actor.target, l.actor.online, hp.tau);
      for (std::size_t e = 0; e < l.critics.online.size(); ++e)
        nn::ema_update(l.critics.target[e], l.critics.online[e], hp.tau);
    }
  }
  return diag;
}

// ---------------------------------------------------------------------------
// Serialization

inline void write_obs(std::ostream& os, const Obs& o) {
  for (int i = 0; i < env::kObservationDim; ++i) io::write_f64(os, o[i]);
}

inline Obs read_obs(std::istream& is) {
  Obs o;
  for (int i = 0; i < env::kObservationDim; ++i) o[i] = io::read_f64(is);
  return o;
}

inline void ReplayBuffer::write(std::ostream& os) const {
  io::write_u64(os, capacity_);
  io::write_u64(os, demo_count_);
  io::write_u64(os, next_);
  io::write_u64(os, data_.size());
  for (const auto& t : data_) {
    write_obs(os, t.obs);
    for (int i = 0; i < env::kActionDim; ++i) io::write_f64(os, t.action[i]);
    io::write_f64(os, t.reward);
    write_obs(os, t.next_obs);
    io::write_u8(os, t.done ? 1 : 0);
  }
}

inline ReplayBuffer ReplayBuffer::read(std::istream& is) {
  const auto capacity = io::read_u64(is);
  if (capacity == 0 || capacity > (1ULL << 32)) throw Error(ErrorCode::format, "implausible buffer capacity");
  ReplayBuffer b(capacity);
  b.demo_count_ = io::read_u64(is);
  b.next_ = io::read_u64(is);
  const auto n = io::read_u64(is);
  if (n > capacity || b.demo_count_ > n) throw Error(ErrorCode::format, "inconsistent buffer header");
  b.data_.resize(n);
  for (auto& t : b.data_) {
    t.obs = read_obs(is);
    for (int i = 0; i < env::kActionDim; ++i) t.action[i] = io::read_f64(is);
    t.reward = io::read_f64(is);
    t.next_obs = read_obs(is);
    t.done = io::read_u8(is) != 0;
  }
  return b;
}

inline void write_hyperparams(std::ostream& os, const RLHyperparams& hp) {
  io::write_u32(os, static_cast<std::uint32_t>(hp.ensemble_size));
  io::write_u32(os, static_cast<std::uint32_t>(hp.critic_updates));
  io::write_u32(os, static_cast<std::uint32_t>(hp.update_every));
  io::write_f64(os, hp.exploration_std);
  io::write_f64(os, hp.target_noise_std);
  io::write_f64(os, hp.noise_clip);
  io::write_f64(os, hp.gamma);
  io::write_f64(os, hp.tau);
  io::write_u32(os, static_cast<std::uint32_t>(hp.batch_size));
  io::write_f64(os, hp.actor_lr);
  io::write_f64(os, hp.critic_lr);
  io::write_u64(os, static_cast<std::uint64_t>(hp.total_steps));
  io::write_u32(os, static_cast<std::uint32_t>(hp.policy_delay));
  io::write_u64(os, hp.buffer_capacity);
  io::write_u32(os, static_cast<std::uint32_t>(hp.hidden.size()));
  for (int h : hp.hidden) io::write_u32(os, static_cast<std::uint32_t>(h));
  io::write_u8(os, hp.actor_uses_pair_min ? 1 : 0);
  io::write_f64(os, hp.demo_sample_ratio);
}

inline RLHyperparams read_hyperparams(std::istream& is) {
  RLHyperparams hp;
  hp.ensemble_size = static_cast<int>(io::read_u32(is));
  hp.critic_updates = static_cast<int>(io::read_u32(is));
  hp.update_every = static_cast<int>(io::read_u32(is));
  hp.exploration_std = io::read_f64(is);
  hp.target_noise_std = io::read_f64(is);
  hp.noise_clip = io::read_f64(is);
  hp.gamma = io::read_f64(is);
  hp.tau = io::read_f64(is);
  hp.batch_size = static_cast<int>(io::read_u32(is));
  hp.actor_lr = io::read_f64(is);
  hp.critic_lr = io::read_f64(is);
  hp.total_steps = static_cast<long long>(io::read_u64(is));
  hp.policy_delay = static_cast<int>(io::read_u32(is));
  hp.buffer_capacity = io::read_u64(is);
  const auto layers = io::read_u32(is);
  if (layers > 64) throw Error(ErrorCode::format, "implausible hidden layer count");
  hp.hidden.assign(layers, 0);
  for (auto& h : hp.hidden) h = static_cast<int>(io::read_u32(is));
  hp.actor_uses_pair_min = io::read_u8(is) != 0;
  hp.demo_sample_ratio = io::read_f64(is);
  hp.validate();
  return hp;
}

// Learner block: "PLRLTD31", hyperparameters, actor and target, E critic
// pairs, Adam states, counters, RNG states, then a u8 flag and the optional
// buffer snapshot.
inline constexpr std::string_view kLearnerMagic = "PLRLTD31";

inline void write_learner(std::ostream& os, const Learner& l, const ReplayBuffer* buffer = nullptr) {
  io::write_bytes(os, kLearnerMagic);
  write_hyperparams(os, l.hp);
  nn::write_mlp(os, l.actor.online);
  nn::write_mlp(os, l.actor.target);
  for (int e = 0; e < l.critics.size(); ++e) {
    nn::write_mlp(os, l.critics.online[static_cast<std::size_t>(e)]);
    nn::write_mlp(os, l.critics.target[static_cast<std::size_t>(e)]);
  }
  nn::write_adam(os, l.actor_adam);
  for (const auto& a : l.critic_adam) nn::write_adam(os, a);
  io::write_u64(os, static_cast<std::uint64_t>(l.updates));
  io::write_u64(os, static_cast<std::uint64_t>(l.critic_steps));
  io::write_string(os, serialize_rng(l.replay_rng));
  io::write_string(os, serialize_rng(l.target_noise_rng));
  io::write_u8(os, buffer ? 1 : 0);
  if (buffer) buffer->write(os);
}

inline Learner read_learner(std::istream& is, std::optional<ReplayBuffer>* buffer = nullptr) {
  io::expect_magic(is, kLearnerMagic);
  Learner l;
  l.hp = read_hyperparams(is);
  l.actor.online = nn::read_mlp(is);
  l.actor.target = nn::read_mlp(is);
  for (int e = 0; e < l.hp.ensemble_size; ++e) {
    l.critics.online.push_back(nn::read_mlp(is));
    l.critics.target.push_back(nn::read_mlp(is));
  }
  l.actor_adam = nn::read_adam(is);
  for (int e = 0; e < l.hp.ensemble_size; ++e) l.critic_adam.push_back(nn::read_adam(is));
  l.updates = static_cast<long long>(io::read_u64(is));
  l.critic_steps = static_cast<long long>(io::read_u64(is));
  l.replay_rng = deserialize_rng(io::read_string(is));
  l.target_noise_rng = deserialize_rng(io::read_string(is));
  if (l.actor.online.in_dim() != env::kObservationDim || l.actor.online.out_dim() != env::kActionDim)
    throw Error(ErrorCode::format, "actor shape does not match the environment");
  for (const auto& c : l.critics.online)
    if (c.in_dim() != env::kObservationDim + env::kActionDim || c.out_dim() != 1)
      throw Error(ErrorCode::format, "critic shape does not match the environment");
  const bool has_buffer = io::read_u8(is) != 0;
  if (has_buffer) {
    auto b = ReplayBuffer::read(is);
    if (buffer) *buffer = std::move(b);
  }
  return l;
}

}  // namespace planrl::rl
