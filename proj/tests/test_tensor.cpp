#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "planrl/tensor.hpp"
#include "test_support.hpp"

using namespace planrl;
using namespace planrl::nn;

using testing_support::scalar_forward;

TEST(TensorForward, ZeroWeightsGiveBias) {
  Rng rng(1);
  Mlp net = make_mlp({3, 2}, Activation::identity, Activation::identity, rng);
  net.layers[0].weight.setZero();
  net.layers[0].bias << 0.25, -1.5;
  const Vec out = forward(net, Vec::Random(3));
  EXPECT_EQ(out[0], 0.25);
  EXPECT_EQ(out[1], -1.5);
}

TEST(TensorForward, IdentityLayerPassesInput) {
  Rng rng(1);
  Mlp net = make_mlp({4, 4}, Activation::identity, Activation::identity, rng);
  net.layers[0].weight.setIdentity();
  net.layers[0].bias.setZero();
  Vec x(4);
  x << 1.0, -2.0, 3.5, 0.0;
  EXPECT_EQ(forward(net, x), x);
}

TEST(TensorForward, MatchesScalarLoopOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Mlp net = make_mlp({5, 7, 3}, Activation::tanh, Activation::tanh, rng);
    Vec x(5);
    for (int i = 0; i < 5; ++i) x[i] = uniform(rng, -2, 2);
    const Vec y = forward(net, x);
    const auto oracle = scalar_forward(net, std::vector<double>(x.data(), x.data() + x.size()));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], oracle[static_cast<std::size_t>(i)], 1e-14);
  }
}

TEST(TensorForward, IsPure) {
  Rng rng(3);
  Mlp net = make_mlp({6, 16, 16, 2}, Activation::relu, Activation::tanh, rng);
  Vec x = Vec::LinSpaced(6, -1, 1);
  const Vec a = forward(net, x);
  const Vec b = forward(net, x);
  EXPECT_EQ(a, b);
}

TEST(TensorForward, DimensionMismatchIsStructured) {
  Rng rng(1);
  Mlp net = make_mlp({3, 2}, Activation::identity, Activation::identity, rng);
  try {
    forward(net, Vec::Zero(4));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}

TEST(TensorForward, FiniteForLargeInputs) {
  Rng rng(9);
  Mlp net = make_mlp({4, 16, 16, 3}, Activation::relu, Activation::identity, rng);
  for (int k = 0; k < 100; ++k) {
    Vec x(4);
    for (int i = 0; i < 4; ++i) x[i] = uniform(rng, -1e3, 1e3);
    EXPECT_TRUE(forward(net, x).allFinite());
  }
}

TEST(TensorInit, UniformWithinFanInBound) {
  Rng rng(4);
  Mlp net = make_mlp({9, 16, 4}, Activation::relu, Activation::identity, rng);
  for (const auto& l : net.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim()));
    EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_LE(l.bias.cwiseAbs().maxCoeff(), bound);
  }
}

TEST(TensorBackward, ZeroOutputGradGivesZeroGradient) {
  Rng rng(2);
  Mlp net = make_mlp({3, 5, 2}, Activation::tanh, Activation::identity, rng);
  const auto g = backward(net, Vec::Ones(3), Vec::Zero(2));
  for (std::size_t i = 0; i < g.weight.size(); ++i) {
    EXPECT_TRUE(g.weight[i].isZero(0));
    EXPECT_TRUE(g.bias[i].isZero(0));
  }
}

TEST(TensorBackward, LinearQuadraticClosedForm) {
  // L = |Wx + b|^2, dL/dW = 2 (Wx + b) x^T, dL/db = 2 (Wx + b).
  Rng rng(5);
  Mlp net = make_mlp({3, 2}, Activation::identity, Activation::identity, rng);
  Vec x(3);
  x << 0.5, -1.0, 2.0;
  const Vec y = forward(net, x);
  const auto g = backward(net, x, 2.0 * y);
  const Mat expected_w = 2.0 * y * x.transpose();
  EXPECT_TRUE(g.weight[0].isApprox(expected_w, 1e-14));
  EXPECT_TRUE(g.bias[0].isApprox(2.0 * y, 1e-14));
}

TEST(TensorBackward, MatchesFiniteDifferencesOnRandomNets) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed + 100);
    const int depth = 1 + static_cast<int>(uniform_index(rng, 3));
    std::vector<int> sizes{1 + static_cast<int>(uniform_index(rng, 16))};
    for (int d = 0; d < depth; ++d) sizes.push_back(1 + static_cast<int>(uniform_index(rng, 16)));
    const auto hidden = static_cast<Activation>(uniform_index(rng, 3));
    const auto output = static_cast<Activation>(uniform_index(rng, 3));
    Mlp net = make_mlp(std::span<const int>(sizes), hidden, output, rng);
    Vec x(sizes.front());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = uniform(rng, -1, 1);
    Vec og(sizes.back());
    for (Eigen::Index i = 0; i < og.size(); ++i) og[i] = uniform(rng, -1, 1);
    const auto g = backward(net, x, og);
    auto loss = [&](const Mlp& n) { return forward(n, x).dot(og); };
    const auto r = testing_support::check_gradient(net, g, loss);
    EXPECT_TRUE(r.ok) << "seed " << seed << " worst relative error " << r.worst_relative << " at " << r.where;
  }
}

TEST(TensorBackward, InputGradientMatchesFiniteDifferences) {
  Rng rng(77);
  Mlp net = make_mlp({4, 8, 3}, Activation::tanh, Activation::tanh, rng);
  Vec x = Vec::LinSpaced(4, -0.5, 0.7);
  Vec og(3);
  og << 0.3, -1.0, 0.5;
  ForwardCache cache;
  forward_batch(net, Mat(x), &cache);
  Mat dx;
  backward_batch(net, cache, Mat(og), &dx);
  for (int i = 0; i < 4; ++i) {
    Vec xp = x, xm = x;
    xp[i] += 1e-5;
    xm[i] -= 1e-5;
    const double fd = (forward(net, xp).dot(og) - forward(net, xm).dot(og)) / 2e-5;
    EXPECT_NEAR(dx(i, 0), fd, 1e-7 + 1e-4 * std::abs(fd));
  }
}

TEST(TensorAdam, ZeroGradientFromFreshStateIsNoOp) {
  Rng rng(1);
  Mlp net = make_mlp({2, 2}, Activation::identity, Activation::identity, rng);
  const Mlp before = net;
  auto st = AdamState::for_network(net);
  adam_step(st, net, Gradients::zeros_like(net), 1e-3);
  EXPECT_EQ(net, before);
  EXPECT_EQ(st.step, 1u);
}

TEST(TensorAdam, ZeroGradientDecaysMoments) {
  Rng rng(1);
  Mlp net = make_mlp({2, 2}, Activation::identity, Activation::identity, rng);
  auto st = AdamState::for_network(net);
  st.first_moment.weight[0].setConstant(1.0);
  st.second_moment.weight[0].setConstant(1.0);
  adam_step(st, net, Gradients::zeros_like(net), 1e-3);
  EXPECT_DOUBLE_EQ(st.first_moment.weight[0](0, 0), 0.9);
  EXPECT_DOUBLE_EQ(st.second_moment.weight[0](0, 0), 0.999);
}

TEST(TensorAdam, ScalarOracleOneAndTwoSteps) {
  Mlp net;
  net.layers.push_back(Layer{Mat::Constant(1, 1, 0.5), Vec::Zero(1), Activation::identity});
  auto st = AdamState::for_network(net);
  Gradients g = Gradients::zeros_like(net);
  g.weight[0](0, 0) = 0.2;
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double p = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    adam_step(st, net, g, lr);
    m = b1 * m + (1 - b1) * 0.2;
    v = b2 * v + (1 - b2) * 0.04;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    p -= lr * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(net.layers[0].weight(0, 0), p, 1e-15) << "step " << t;
  }
  // Each bias-corrected step with a constant gradient moves by about lr.
  EXPECT_NEAR(0.5 - p, 2 * lr, 1e-7);
}

TEST(TensorAdam, NonFiniteGradientIsStructured) {
  Rng rng(1);
  Mlp net = make_mlp({2, 2}, Activation::identity, Activation::identity, rng);
  auto st = AdamState::for_network(net);
  auto g = Gradients::zeros_like(net);
  g.bias[0][1] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(st, net, g, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_finite);
  }
}

TEST(TensorEma, ExtremesAndArithmetic) {
  Rng rng(1);
  Mlp online = make_mlp({3, 4, 2}, Activation::relu, Activation::identity, rng);
  Mlp target = make_mlp({3, 4, 2}, Activation::relu, Activation::identity, rng);
  Mlp t1 = target;
  ema_update(t1, online, 1.0);
  EXPECT_EQ(t1, online);
  Mlp t0 = target;
  ema_update(t0, online, 0.0);
  EXPECT_EQ(t0, target);

  Mlp a, b;
  a.layers.push_back(Layer{Mat::Constant(1, 1, 1.0), Vec::Zero(1), Activation::identity});
  b.layers.push_back(Layer{Mat::Constant(1, 1, 0.0), Vec::Zero(1), Activation::identity});
  ema_update(a, b, 0.01);
  EXPECT_DOUBLE_EQ(a.layers[0].weight(0, 0), 0.99);
}

TEST(TensorEma, EveryEntryExactAndLinear) {
  Rng rng(2);
  Mlp online = make_mlp({3, 5, 2}, Activation::tanh, Activation::identity, rng);
  Mlp target = make_mlp({3, 5, 2}, Activation::tanh, Activation::identity, rng);
  const double tau = 0.3;
  Mlp once = target;
  ema_update(once, online, tau);
  for (std::size_t l = 0; l < once.layers.size(); ++l)
    for (Eigen::Index i = 0; i < once.layers[l].weight.size(); ++i)
      EXPECT_EQ(once.layers[l].weight.data()[i],
                tau * online.layers[l].weight.data()[i] + (1 - tau) * target.layers[l].weight.data()[i]);
  Mlp twice = target;
  ema_update(twice, online, tau);
  ema_update(twice, online, tau);
  Mlp combined = target;
  ema_update(combined, online, 1 - (1 - tau) * (1 - tau));
  for (std::size_t l = 0; l < twice.layers.size(); ++l) {
    EXPECT_TRUE(twice.layers[l].weight.isApprox(combined.layers[l].weight, 1e-14));
    EXPECT_TRUE(twice.layers[l].bias.isApprox(combined.layers[l].bias, 1e-14));
  }
}

TEST(TensorEma, ShapeMismatchIsStructured) {
  Rng rng(1);
  Mlp a = make_mlp({3, 4, 2}, Activation::relu, Activation::identity, rng);
  Mlp b = make_mlp({3, 5, 2}, Activation::relu, Activation::identity, rng);
  try {
    ema_update(a, b, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}

TEST(TensorCheckpoint, BitExactRoundTrip) {
  Rng rng(11);
  Mlp net = make_mlp({5, 8, 8, 3}, Activation::relu, Activation::tanh, rng);
  net.layers[1].weight(0, 0) = -0.0;
  net.layers[2].bias[1] = 1e-310;  // subnormal
  std::stringstream ss;
  write_mlp(ss, net);
  const std::string bytes = ss.str();
  const Mlp back = read_mlp(ss);
  EXPECT_EQ(back, net);
  EXPECT_TRUE(std::signbit(back.layers[1].weight(0, 0)));
  std::stringstream again;
  write_mlp(again, back);
  EXPECT_EQ(again.str(), bytes);
}

TEST(TensorCheckpoint, DocumentedLayout) {
  Mlp net;
  Mat w(2, 1);
  w << 1.0, 2.0;
  net.layers.push_back(Layer{w, Vec::Constant(2, 3.0), Activation::relu});
  std::stringstream ss;
  write_mlp(ss, net);
  const std::string b = ss.str();
  ASSERT_EQ(b.size(), 8u + 4 + 4 + 4 + 1 + 16 + 16);
  EXPECT_EQ(b.substr(0, 8), "PLRLMLP1");
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 1u);   // layer count, little endian
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 1u);  // in
  EXPECT_EQ(static_cast<unsigned char>(b[16]), 2u);  // out
  EXPECT_EQ(static_cast<unsigned char>(b[20]), 2u);  // relu tag
}

TEST(TensorCheckpoint, CorruptInputIsStructured) {
  std::stringstream ss("PLRLMLP1\x01");
  try {
    read_mlp(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::format);
  }
  std::stringstream bad("NOTMAGIC");
  EXPECT_THROW(read_mlp(bad), Error);
}

TEST(TensorCheckpoint, AdamRoundTrip) {
  Rng rng(3);
  Mlp net = make_mlp({3, 4, 2}, Activation::relu, Activation::identity, rng);
  auto st = AdamState::for_network(net);
  auto g = backward(net, Vec::Ones(3), Vec::Ones(2));
  adam_step(st, net, g, 1e-2);
  std::stringstream ss;
  write_adam(ss, st);
  const auto back = read_adam(ss);
  EXPECT_EQ(back.step, st.step);
  for (std::size_t i = 0; i < st.first_moment.weight.size(); ++i) {
    EXPECT_EQ(back.first_moment.weight[i], st.first_moment.weight[i]);
    EXPECT_EQ(back.second_moment.bias[i], st.second_moment.bias[i]);
  }
}
