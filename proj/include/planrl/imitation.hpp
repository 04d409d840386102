#pragma once

// Behavior cloning: a tanh-bounded MLP regressed onto demonstrated actions
// with a mean squared error (the unit-variance Gaussian likelihood up to
// an affine constant).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <vector>

#include "planrl/binary_io.hpp"
#include "planrl/env.hpp"
#include "planrl/expert.hpp"
#include "planrl/rng.hpp"
#include "planrl/tensor.hpp"

namespace planrl {

/// Per-dimension affine input normalization. Near-constant dimensions keep
/// unit scale.
struct Normalizer {
  nn::Vec mean;
  nn::Vec stddev;

  static Normalizer identity(Eigen::Index dim) { return {nn::Vec::Zero(dim), nn::Vec::Ones(dim)}; }

  static Normalizer fit(const nn::Mat& samples) {
    Normalizer n;
    const double count = static_cast<double>(samples.cols());
    n.mean = samples.rowwise().sum() / count;
    const nn::Mat centered = samples.colwise() - n.mean;
    n.stddev = (centered.array().square().rowwise().sum() / count).sqrt().matrix();
    for (Eigen::Index i = 0; i < n.stddev.size(); ++i)
      if (!(n.stddev[i] > 1e-6)) n.stddev[i] = 1.0;
    return n;
  }

  nn::Mat apply(const nn::Mat& x) const {
    return ((x.colwise() - mean).array().colwise() / stddev.array()).matrix();
  }
  nn::Vec apply(const nn::Vec& x) const { return ((x - mean).array() / stddev.array()).matrix(); }

  void write(std::ostream& os) const {
    io::write_u32(os, static_cast<std::uint32_t>(mean.size()));
    for (Eigen::Index i = 0; i < mean.size(); ++i) io::write_f64(os, mean[i]);
    for (Eigen::Index i = 0; i < stddev.size(); ++i) io::write_f64(os, stddev[i]);
  }

  static Normalizer read(std::istream& is) {
    const auto dim = io::read_u32(is);
    if (dim == 0 || dim > (1u << 16)) throw Error(ErrorCode::format, "implausible normalizer dimension");
    Normalizer n{nn::Vec(dim), nn::Vec(dim)};
    for (std::uint32_t i = 0; i < dim; ++i) n.mean[i] = io::read_f64(is);
    for (std::uint32_t i = 0; i < dim; ++i) n.stddev[i] = io::read_f64(is);
    return n;
  }

  friend bool operator==(const Normalizer& a, const Normalizer& b) {
    return a.mean.size() == b.mean.size() && a.mean == b.mean && a.stddev == b.stddev;
  }
};

/// Shuffled minibatch index lists for one epoch.
inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  return out;
}

inline nn::Mat gather_columns(const nn::Mat& m, const std::vector<std::size_t>& idx) {
  nn::Mat out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(idx[j]));
  return out;
}

struct BCPolicy {
  nn::Mlp net;  // normalized observation -> action, tanh output
  Normalizer norm;

  friend bool operator==(const BCPolicy& a, const BCPolicy& b) { return a.net == b.net && a.norm == b.norm; }
};

struct BCConfig {
  int epochs = 300;
  double lr = 1e-3;
  int batch_size = 64;
  std::vector<int> hidden = {64, 64};
  std::uint64_t seed = 0;
};

struct BCTrainResult {
  BCPolicy policy;
  std::vector<double> epoch_loss;  // full-dataset loss after each epoch
  double initial_loss = 0.0;
};

/// Observations (columns) and actions (columns) for every demo step.
inline std::pair<nn::Mat, nn::Mat> demo_matrices(const expert::DemoDataset& ds) {
  const auto n = static_cast<Eigen::Index>(ds.transition_count());
  nn::Mat obs(env::kObservationDim, n);
  nn::Mat act(env::kActionDim, n);
  Eigen::Index j = 0;
  for (const auto& tr : ds.trajectories)
    for (std::size_t t = 0; t < tr.size(); ++t, ++j) {
      obs.col(j) = env::observe(tr.states[t]);
      act.col(j) = tr.actions[t];
    }
  return {obs, act};
}

/// Mean over samples of the squared Euclidean action error.
inline double bc_loss(const BCPolicy& policy, const nn::Mat& observations, const nn::Mat& actions) {
  if (observations.cols() == 0) throw Error(ErrorCode::invalid_argument, "bc_loss on an empty batch");
  if (observations.cols() != actions.cols()) throw Error(ErrorCode::dimension_mismatch, "batch size mismatch");
  const nn::Mat pred = nn::forward_batch(policy.net, policy.norm.apply(observations));
  return (pred - actions).squaredNorm() / static_cast<double>(observations.cols());
}

/// Parameter gradient of bc_loss on one batch.
inline nn::Gradients bc_gradient(const BCPolicy& policy, const nn::Mat& observations, const nn::Mat& actions) {
  nn::ForwardCache cache;
  const nn::Mat pred = nn::forward_batch(policy.net, policy.norm.apply(observations), &cache);
  const nn::Mat dpred = 2.0 * (pred - actions) / static_cast<double>(observations.cols());
  return nn::backward_batch(policy.net, cache, dpred);
}

inline BCPolicy make_bc_policy(const Normalizer& norm, const std::vector<int>& hidden, Rng& rng) {
  std::vector<int> sizes{static_cast<int>(norm.mean.size())};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(env::kActionDim);
  return BCPolicy{nn::make_mlp(std::span<const int>(sizes), nn::Activation::relu, nn::Activation::tanh, rng), norm};
}

inline BCTrainResult train_bc(const nn::Mat& observations, const nn::Mat& actions, const BCConfig& cfg) {
  if (observations.cols() == 0) throw Error(ErrorCode::invalid_argument, "empty demonstration dataset");
  Rng rng = make_stream(cfg.seed, stream::supervised);
  BCTrainResult result;
  result.policy = make_bc_policy(Normalizer::fit(observations), cfg.hidden, rng);
  auto& policy = result.policy;
  auto adam = nn::AdamState::for_network(policy.net);
  result.initial_loss = bc_loss(policy, observations, actions);
  const auto bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : minibatches(static_cast<std::size_t>(observations.cols()), bs, rng)) {
      const auto g = bc_gradient(policy, gather_columns(observations, idx), gather_columns(actions, idx));
      nn::adam_step(adam, policy.net, g, cfg.lr);
    }
    result.epoch_loss.push_back(bc_loss(policy, observations, actions));
  }
  return result;
}

inline BCTrainResult train_bc(const expert::DemoDataset& ds, const BCConfig& cfg) {
  if (ds.transition_count() == 0) throw Error(ErrorCode::invalid_argument, "empty demonstration dataset");
  const auto [obs, act] = demo_matrices(ds);
  return train_bc(obs, act, cfg);
}

/// Gaussian mean; no sampling.
inline env::Action bc_act(const BCPolicy& policy, const nn::Vec& observation) {
  return nn::forward(policy.net, policy.norm.apply(observation));
}

inline env::Action bc_act(const BCPolicy& policy, const env::State& s) { return bc_act(policy, env::observe(s)); }

// Checkpoint: "PLRLBC01", MLP block, normalizer block.
inline constexpr std::string_view kBCMagic = "PLRLBC01";

inline void write_bc(std::ostream& os, const BCPolicy& p) {
  io::write_bytes(os, kBCMagic);
  nn::write_mlp(os, p.net);
  p.norm.write(os);
}

inline BCPolicy read_bc(std::istream& is) {
  io::expect_magic(is, kBCMagic);
  BCPolicy p;
  p.net = nn::read_mlp(is);
  p.norm = Normalizer::read(is);
  if (p.norm.mean.size() != p.net.in_dim()) throw Error(ErrorCode::format, "normalizer does not match network input");
  return p;
}

inline void save_bc(const std::filesystem::path& path, const BCPolicy& p) {
  io::write_file_atomic(path, [&](std::ostream& os) { write_bc(os, p); });
}

inline BCPolicy load_bc(const std::filesystem::path& path) {
  auto is = io::open_input(path);
  return read_bc(is);
}

}  // namespace planrl
