#pragma once

// Dense multilayer perceptrons with exact backpropagation, Adam and
// exponential-moving-average target tracking. Batches are column-major:
// every column of an input matrix is one sample.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "planrl/binary_io.hpp"
#include "planrl/error.hpp"
#include "planrl/rng.hpp"

namespace planrl::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation : std::uint8_t { identity = 0, tanh = 1, relu = 2 };

struct Layer {
  Mat weight;  // out x in
  Vec bias;    // out
  Activation activation = Activation::identity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

struct Mlp {
  std::vector<Layer> layers;

  Eigen::Index in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  Eigen::Index out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& x = a.layers[i];
      const auto& y = b.layers[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
          x.weight.cols() != y.weight.cols() || x.weight != y.weight || x.bias != y.bias)
        return false;
    }
    return true;
  }
};

/// Same shape as an Mlp's parameters, without activations.
struct Gradients {
  std::vector<Mat> weight;
  std::vector<Vec> bias;

  static Gradients zeros_like(const Mlp& net) {
    Gradients g;
    for (const auto& l : net.layers) {
      g.weight.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vec::Zero(l.bias.size()));
    }
    return g;
  }

  Gradients& operator+=(const Gradients& o) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] += o.weight[i];
      bias[i] += o.bias[i];
    }
    return *this;
  }

  Gradients& operator*=(double s) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] *= s;
      bias[i] *= s;
    }
    return *this;
  }

  bool all_finite() const {
    for (std::size_t i = 0; i < weight.size(); ++i)
      if (!weight[i].allFinite() || !bias[i].allFinite()) return false;
    return true;
  }
};

inline void check_chain(const Mlp& net) {
  if (net.layers.empty()) throw Error(ErrorCode::dimension_mismatch, "network has no layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (l.bias.size() != l.weight.rows())
      throw Error(ErrorCode::dimension_mismatch, "bias length does not match layer " + std::to_string(i));
    if (i > 0 && l.in_dim() != net.layers[i - 1].out_dim())
      throw Error(ErrorCode::dimension_mismatch, "layer " + std::to_string(i) + " does not chain");
  }
}

/// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline Mlp make_mlp(std::span<const int> sizes, Activation hidden, Activation output, Rng& rng) {
  if (sizes.size() < 2) throw Error(ErrorCode::invalid_argument, "an MLP needs at least input and output sizes");
  Mlp net;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int in = sizes[i];
    const int out = sizes[i + 1];
    if (in <= 0 || out <= 0) throw Error(ErrorCode::invalid_argument, "layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer l;
    l.weight.resize(out, in);
    l.bias.resize(out);
    // Row-major fill order so initialization does not depend on storage order.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weight(r, c) = uniform(rng, -bound, bound);
    for (int r = 0; r < out; ++r) l.bias(r) = uniform(rng, -bound, bound);
    l.activation = (i + 2 == sizes.size()) ? output : hidden;
    net.layers.push_back(std::move(l));
  }
  return net;
}

inline Mlp make_mlp(std::initializer_list<int> sizes, Activation hidden, Activation output, Rng& rng) {
  std::vector<int> v(sizes);
  return make_mlp(std::span<const int>(v), hidden, output, rng);
}

namespace detail {

inline void activate(Mat& z, Activation a) {
  switch (a) {
    case Activation::identity: break;
    case Activation::tanh: z = z.array().tanh().matrix(); break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
  }
}

// d(activation)/dz expressed through the activation output y.
inline void scale_by_derivative(Mat& grad, const Mat& y, Activation a) {
  switch (a) {
    case Activation::identity: break;
    case Activation::tanh: grad.array() *= (1.0 - y.array().square()); break;
    case Activation::relu: grad.array() *= (y.array() > 0.0).cast<double>(); break;
  }
}

}  // namespace detail

/// Per-layer values kept by forward for backward: outputs[0] is the input,
/// outputs[i + 1] the post-activation output of layer i.
struct ForwardCache {
  std::vector<Mat> outputs;
};

inline Mat forward_batch(const Mlp& net, const Mat& input, ForwardCache* cache = nullptr) {
  check_chain(net);
  if (input.rows() != net.in_dim())
    throw Error(ErrorCode::dimension_mismatch, "input has " + std::to_string(input.rows()) + " rows, network expects " +
                                                   std::to_string(net.in_dim()));
  if (cache) {
    cache->outputs.clear();
    cache->outputs.push_back(input);
  }
  Mat x = input;
  for (const auto& l : net.layers) {
    Mat z = l.weight * x;
    z.colwise() += l.bias;
    detail::activate(z, l.activation);
    x = std::move(z);
    if (cache) cache->outputs.push_back(x);
  }
  return x;
}

inline Vec forward(const Mlp& net, const Vec& input) { return forward_batch(net, Mat(input)).col(0); }

/// Gradient of sum(output .* output_grad) with respect to every parameter;
/// optionally also with respect to the input.
inline Gradients backward_batch(const Mlp& net, const ForwardCache& cache, const Mat& output_grad,
                                Mat* input_grad = nullptr) {
  check_chain(net);
  if (cache.outputs.size() != net.layers.size() + 1)
    throw Error(ErrorCode::dimension_mismatch, "forward cache does not belong to this network");
  const Mat& out = cache.outputs.back();
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
    throw Error(ErrorCode::dimension_mismatch, "output gradient shape does not match forward output");

  Gradients g;
  g.weight.resize(net.layers.size());
  g.bias.resize(net.layers.size());
  Mat delta = output_grad;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const auto& l = net.layers[k];
    detail::scale_by_derivative(delta, cache.outputs[k + 1], l.activation);
    g.weight[k].noalias() = delta * cache.outputs[k].transpose();
    g.bias[k] = delta.rowwise().sum();
    if (k > 0 || input_grad) {
      Mat prev = l.weight.transpose() * delta;
      delta = std::move(prev);
    }
  }
  if (input_grad) *input_grad = std::move(delta);
  return g;
}

inline Gradients backward(const Mlp& net, const Vec& input, const Vec& output_grad) {
  ForwardCache cache;
  forward_batch(net, Mat(input), &cache);
  return backward_batch(net, cache, Mat(output_grad));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  Gradients first_moment;
  Gradients second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_network(const Mlp& net, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8) {
    return AdamState{Gradients::zeros_like(net), Gradients::zeros_like(net), 0, beta1, beta2, epsilon};
  }
};

inline void check_same_shape(const Mlp& net, const Gradients& g, const char* what) {
  if (g.weight.size() != net.layers.size() || g.bias.size() != net.layers.size())
    throw Error(ErrorCode::dimension_mismatch, std::string(what) + " layer count mismatch");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (g.weight[i].rows() != net.layers[i].weight.rows() || g.weight[i].cols() != net.layers[i].weight.cols() ||
        g.bias[i].size() != net.layers[i].bias.size())
      throw Error(ErrorCode::dimension_mismatch, std::string(what) + " shape mismatch at layer " + std::to_string(i));
  }
}

/// Bias-corrected Adam step. Parameters and state are updated in place.
inline void adam_step(AdamState& state, Mlp& net, const Gradients& grads, double lr) {
  check_same_shape(net, grads, "gradient");
  check_same_shape(net, state.first_moment, "adam first moment");
  check_same_shape(net, state.second_moment, "adam second moment");
  if (!grads.all_finite()) throw Error(ErrorCode::non_finite, "gradient contains NaN or Inf");

  ++state.step;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double eps = state.epsilon;

  auto apply = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    apply(net.layers[i].weight, state.first_moment.weight[i], state.second_moment.weight[i], grads.weight[i]);
    apply(net.layers[i].bias, state.first_moment.bias[i], state.second_moment.bias[i], grads.bias[i]);
  }
}

// ---------------------------------------------------------------------------
// Target networks

struct TargetNet {
  Mlp params;
  double tau = 0.01;
};

inline void check_same_shape(const Mlp& a, const Mlp& b) {
  if (a.layers.size() != b.layers.size()) throw Error(ErrorCode::dimension_mismatch, "target/online layer count");
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    if (a.layers[i].weight.rows() != b.layers[i].weight.rows() ||
        a.layers[i].weight.cols() != b.layers[i].weight.cols() || a.layers[i].bias.size() != b.layers[i].bias.size())
      throw Error(ErrorCode::dimension_mismatch, "target/online shape mismatch at layer " + std::to_string(i));
}

/// target <- tau * online + (1 - tau) * target, entrywise.
inline void ema_update(Mlp& target, const Mlp& online, double tau) {
  check_same_shape(target, online);
  for (std::size_t i = 0; i < target.layers.size(); ++i) {
    auto& t = target.layers[i];
    const auto& o = online.layers[i];
    t.weight = tau * o.weight + (1.0 - tau) * t.weight;
    t.bias = tau * o.bias + (1.0 - tau) * t.bias;
  }
}

inline void ema_update(TargetNet& target, const Mlp& online) { ema_update(target.params, online, target.tau); }

// ---------------------------------------------------------------------------
// Checkpoint: "PLRLMLP1", u32 layer count, then per layer
// u32 in, u32 out, u8 activation, out*in f64 weights (row-major), out f64 biases.

inline constexpr std::string_view kMlpMagic = "PLRLMLP1";

inline void write_mlp(std::ostream& os, const Mlp& net) {
  io::write_bytes(os, kMlpMagic);
  io::write_u32(os, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    io::write_u32(os, static_cast<std::uint32_t>(l.in_dim()));
    io::write_u32(os, static_cast<std::uint32_t>(l.out_dim()));
    io::write_u8(os, static_cast<std::uint8_t>(l.activation));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) io::write_f64(os, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) io::write_f64(os, l.bias(r));
  }
}

inline Mlp read_mlp(std::istream& is) {
  io::expect_magic(is, kMlpMagic);
  const auto count = io::read_u32(is);
  if (count == 0 || count > 64) throw Error(ErrorCode::format, "implausible layer count");
  Mlp net;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto in = io::read_u32(is);
    const auto out = io::read_u32(is);
    const auto act = io::read_u8(is);
    if (in == 0 || out == 0 || in > (1u << 16) || out > (1u << 16)) throw Error(ErrorCode::format, "implausible layer size");
    if (act > 2) throw Error(ErrorCode::format, "unknown activation tag");
    Layer l;
    l.activation = static_cast<Activation>(act);
    l.weight.resize(out, in);
    l.bias.resize(out);
    for (std::uint32_t r = 0; r < out; ++r)
      for (std::uint32_t c = 0; c < in; ++c) l.weight(r, c) = io::read_f64(is);
    for (std::uint32_t r = 0; r < out; ++r) l.bias(r) = io::read_f64(is);
    net.layers.push_back(std::move(l));
  }
  check_chain(net);
  return net;
}

inline void save_mlp(const std::filesystem::path& path, const Mlp& net) {
  io::write_file_atomic(path, [&](std::ostream& os) { write_mlp(os, net); });
}

inline Mlp load_mlp(const std::filesystem::path& path) {
  auto is = io::open_input(path);
  return read_mlp(is);
}

inline void write_gradients(std::ostream& os, const Gradients& g) {
  io::write_u32(os, static_cast<std::uint32_t>(g.weight.size()));
  for (std::size_t i = 0; i < g.weight.size(); ++i) {
    io::write_u32(os, static_cast<std::uint32_t>(g.weight[i].rows()));
    io::write_u32(os, static_cast<std::uint32_t>(g.weight[i].cols()));
    for (Eigen::Index r = 0; r < g.weight[i].rows(); ++r)
      for (Eigen::Index c = 0; c < g.weight[i].cols(); ++c) io::write_f64(os, g.weight[i](r, c));
    for (Eigen::Index r = 0; r < g.bias[i].size(); ++r) io::write_f64(os, g.bias[i](r));
  }
}

inline Gradients read_gradients(std::istream& is) {
  Gradients g;
  const auto count = io::read_u32(is);
  if (count > 64) throw Error(ErrorCode::format, "implausible layer count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rows = io::read_u32(is);
    const auto cols = io::read_u32(is);
    if (rows > (1u << 16) || cols > (1u << 16)) throw Error(ErrorCode::format, "implausible layer size");
    Mat w(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) w(r, c) = io::read_f64(is);
    Vec b(rows);
    for (std::uint32_t r = 0; r < rows; ++r) b(r) = io::read_f64(is);
    g.weight.push_back(std::move(w));
    g.bias.push_back(std::move(b));
  }
  return g;
}

inline void write_adam(std::ostream& os, const AdamState& s) {
  io::write_u64(os, s.step);
  io::write_f64(os, s.beta1);
  io::write_f64(os, s.beta2);
  io::write_f64(os, s.epsilon);
  write_gradients(os, s.first_moment);
  write_gradients(os, s.second_moment);
}

inline AdamState read_adam(std::istream& is) {
  AdamState s;
  s.step = io::read_u64(is);
  s.beta1 = io::read_f64(is);
  s.beta2 = io::read_f64(is);
  s.epsilon = io::read_f64(is);
  s.first_moment = read_gradients(is);
  s.second_moment = read_gradients(is);
  return s;
}

}  // namespace planrl::nn
