#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <thread>

#include "planrl/td3.hpp"
#include "test_support.hpp"
#include "oracles.hpp"

using namespace planrl;
using namespace planrl::rl;
using testing_support::scalar_forward;

using namespace oracles;

TEST(Hyperparams, DefaultsAndValidation) {
  const RLHyperparams hp;
  EXPECT_EQ(hp.ensemble_size, 2);
  EXPECT_EQ(hp.critic_updates, 1);
  EXPECT_EQ(hp.update_every, 2);
  EXPECT_EQ(hp.exploration_std, 0.1);
  EXPECT_EQ(hp.target_noise_std, 0.2);
  EXPECT_EQ(hp.noise_clip, 0.5);
  EXPECT_EQ(hp.gamma, 0.99);
  EXPECT_EQ(hp.tau, 0.01);
  EXPECT_EQ(hp.batch_size, 256);
  EXPECT_EQ(hp.policy_delay, 2);
  EXPECT_EQ(hp.buffer_capacity, 100000u);
  EXPECT_NO_THROW(hp.validate());
  auto bad = [](auto mutate) {
    RLHyperparams h;
    mutate(h);
    EXPECT_THROW(h.validate(), Error);
  };
  bad([](RLHyperparams& h) { h.ensemble_size = 1; });
  bad([](RLHyperparams& h) { h.gamma = 1.0; });
  bad([](RLHyperparams& h) { h.gamma = 0.0; });
  bad([](RLHyperparams& h) { h.noise_clip = 0.0; });
  bad([](RLHyperparams& h) { h.exploration_std = -0.1; });
}

TEST(ReplayBuffer, SeedingCountsEveryDemoStep) {
  const env::World w = env::default_world(env::TaskId::ReachLift);
  const auto demos = expert::generate_demos(w, 10, 1);
  ReplayBuffer b(100000);
  seed_buffer(b, demos);
  EXPECT_EQ(b.size(), demos.transition_count());
  EXPECT_EQ(b.demo_count(), demos.transition_count());
  std::size_t done = 0;
  for (const auto& t : b.contents()) done += t.done;
  EXPECT_EQ(done, 10u);
  EXPECT_EQ(b.contents().back().reward, 1.0);
}

TEST(ReplayBuffer, SeedingBeyondCapacityIsStructured) {
  const env::World w = env::default_world(env::TaskId::ReachLift);
  const auto demos = expert::generate_demos(w, 2, 1);
  ReplayBuffer b(10);
  try {
    seed_buffer(b, demos);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::capacity_exceeded);
  }
}

TEST(ReplayBuffer, DemosSurviveAMillionInserts) {
  Rng rng(1);
  ReplayBuffer b(500);
  std::vector<Transition> demos;
  for (int i = 0; i < 100; ++i) {
    demos.push_back(random_transition(rng));
    b.add_demo(demos.back());
  }
  const Transition online = random_transition(rng);
  for (int i = 0; i < 1000000; ++i) {
    b.add(online);
    ASSERT_LE(b.size(), b.capacity());
  }
  for (std::size_t i = 0; i < demos.size(); ++i) EXPECT_EQ(b.at(i), demos[i]);
  EXPECT_EQ(b.size(), 500u);
  EXPECT_THROW(b.add_demo(online), Error);
}

TEST(ReplayBuffer, UniformSamplingDemoFrequencyWithinThreeSigma) {
  Rng rng(2);
  ReplayBuffer b(10000);
  for (int i = 0; i < 300; ++i) b.add_demo(random_transition(rng));
  for (int i = 0; i < 1700; ++i) b.add(random_transition(rng));
  Rng sampler(3);
  const std::size_t m = 200000;
  const auto idx = b.sample_indices(m, sampler);
  const double p = 300.0 / 2000.0;
  std::size_t demo_hits = 0;
  std::vector<std::size_t> counts(b.size());
  for (auto i : idx) {
    demo_hits += i < b.demo_count();
    ++counts[i];
  }
  const double sd = std::sqrt(static_cast<double>(m) * p * (1 - p));
  EXPECT_NEAR(static_cast<double>(demo_hits), static_cast<double>(m) * p, 3 * sd);
  // Chi-square over all slots: mean m/N, variance about m/N per slot.
  double chi2 = 0.0;
  const double expected = static_cast<double>(m) / static_cast<double>(b.size());
  for (auto c : counts) chi2 += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  const double dof = static_cast<double>(b.size() - 1);
  EXPECT_NEAR(chi2, dof, 4 * std::sqrt(2 * dof));
}

TEST(ReplayBuffer, DemoRatioDrawsFixedShare) {
  Rng rng(4);
  ReplayBuffer b(1000);
  for (int i = 0; i < 10; ++i) b.add_demo(random_transition(rng));
  for (int i = 0; i < 500; ++i) b.add(random_transition(rng));
  const auto idx = b.sample_indices(100, rng, 0.25);
  const auto demo = std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return i < b.demo_count(); });
  EXPECT_EQ(demo, 25);
}

TEST(ReplayBuffer, BinaryRoundTrip) {
  Rng rng(5);
  ReplayBuffer b(50);
  for (int i = 0; i < 5; ++i) b.add_demo(random_transition(rng));
  for (int i = 0; i < 80; ++i) b.add(random_transition(rng, i % 7 == 0));
  std::stringstream ss;
  b.write(ss);
  EXPECT_EQ(ReplayBuffer::read(ss), b);
}

TEST(Explore, ZeroSigmaIsDeterministicPolicy) {
  const Learner l = make_learner(tiny_hp(), 1);
  Rng rng(1), before(1);
  Rng r2(2);
  const Obs o = random_obs(r2);
  EXPECT_EQ(explore_action(l.actor, o, 0.0, rng), policy_action(l.actor, o));
  EXPECT_EQ(serialize_rng(rng), serialize_rng(before));
}

TEST(Explore, AlwaysInBoxAndNoiseStdMatches) {
  Learner l = make_learner(tiny_hp(), 1);
  for (auto& layer : l.actor.online.layers) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  Rng rng(9);
  const Obs o = Obs::Zero();
  const int n = 100000;
  Eigen::Vector4d sum = Eigen::Vector4d::Zero(), sq = Eigen::Vector4d::Zero();
  for (int i = 0; i < n; ++i) {
    const auto a = explore_action(l.actor, o, 0.1, rng);
    ASSERT_LE(a.cwiseAbs().maxCoeff(), 1.0);
    sum += a;
    sq += a.cwiseProduct(a);
  }
  for (int d = 0; d < 4; ++d) {
    const double mean = sum[d] / n;
    const double sd = std::sqrt(sq[d] / n - mean * mean);
    EXPECT_NEAR(sd, 0.1, 0.005);
  }
  // Saturated policy output still lands in the box.
  for (int i = 0; i < 1000; ++i) ASSERT_LE(explore_action(l.actor, o, 5.0, rng).cwiseAbs().maxCoeff(), 1.0);
}

TEST(SamplePair, DistinctAndUniform) {
  Rng rng(3);
  std::vector<std::vector<int>> counts(5, std::vector<int>(5, 0));
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const auto k = sample_pair(5, rng);
    ASSERT_NE(k[0], k[1]);
    ASSERT_GE(std::min(k[0], k[1]), 0);
    ASSERT_LT(std::max(k[0], k[1]), 5);
    ++counts[static_cast<std::size_t>(k[0])][static_cast<std::size_t>(k[1])];
  }
  const double p = 1.0 / 20.0;
  const double sd = std::sqrt(n * p * (1 - p));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      if (i != j) {
        EXPECT_NEAR(counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], n * p, 4 * sd);
      }
  EXPECT_THROW(sample_pair(1, rng), Error);
}

TEST(TdTarget, MatchesScalarOracleOnHundredBatches) {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    RLHyperparams hp = tiny_hp();
    hp.ensemble_size = 2 + static_cast<int>(trial % 4);
    Learner l = make_learner(hp, trial);
    Rng rng(trial + 1000);
    // Targets differ from online so the test sees the right networks.
    for (auto& c : l.critics.target)
      for (auto& layer : c.layers) layer.bias.array() += uniform(rng, -0.5, 0.5);
    const Batch b = random_batch(rng, 8);
    const auto k = sample_pair(hp.ensemble_size, rng);
    const double gamma = uniform(rng, 0.5, 0.999);
    const nn::Mat eps = smoothing_noise(8, trial % 2 ? 0.0 : 0.3, 0.5, rng);
    const nn::Vec y = td_target_with_noise(b, l.actor.target, l.critics.target, k, gamma, eps);
    for (Eigen::Index j = 0; j < 8; ++j)
      ASSERT_NEAR(y[j], scalar_target(b, j, l.actor.target, l.critics.target, k, gamma, eps), 1e-12);
  }
}

TEST(TdTarget, HandEnumeratedLinearCritics) {
  // Critic i: Q = c_i + w_i * a0 with an identity actor on a 1-d slice.
  Learner l = make_learner(tiny_hp(), 1);
  auto set_linear = [](nn::Mlp& net, double c, double w) {
    nn::Mlp lin;
    nn::Mat W = nn::Mat::Zero(1, env::kObservationDim + env::kActionDim);
    W(0, env::kObservationDim) = w;
    lin.layers.push_back(nn::Layer{W, nn::Vec::Constant(1, c), nn::Activation::identity});
    net = lin;
  };
  set_linear(l.critics.target[0], 2.0, 1.0);
  set_linear(l.critics.target[1], 1.5, -1.0);
  nn::Mlp actor;
  nn::Mat A = nn::Mat::Zero(env::kActionDim, env::kObservationDim);
  A(0, 0) = 1.0;
  actor.layers.push_back(nn::Layer{A, nn::Vec::Zero(env::kActionDim), nn::Activation::tanh});
  Batch b;
  b.obs = nn::Mat::Zero(env::kObservationDim, 2);
  b.action = nn::Mat::Zero(env::kActionDim, 2);
  b.next_obs = nn::Mat::Zero(env::kObservationDim, 2);
  b.next_obs(0, 0) = 0.5;
  b.next_obs(0, 1) = -0.5;
  b.reward = nn::Vec::Constant(2, 0.25);
  b.done = nn::Vec::Zero(2);
  const nn::Vec y = td_target_with_noise(b, actor, l.critics.target, {0, 1}, 0.9, nn::Mat::Zero(4, 2));
  const double a0 = std::tanh(0.5), a1 = std::tanh(-0.5);
  EXPECT_NEAR(y[0], 0.25 + 0.9 * std::min(2.0 + a0, 1.5 - a0), 1e-15);
  EXPECT_NEAR(y[1], 0.25 + 0.9 * std::min(2.0 + a1, 1.5 - a1), 1e-15);
  // Noise pushes the action past the box; the clip bounds it at 1.
  nn::Mat big = nn::Mat::Zero(4, 2);
  big(0, 0) = 5.0;
  const nn::Vec yc = td_target_with_noise(b, actor, l.critics.target, {0, 1}, 0.9, big);
  EXPECT_NEAR(yc[0], 0.25 + 0.9 * std::min(3.0, 0.5), 1e-15);
}

TEST(TdTarget, GammaZeroAndDoneAreExactlyReward) {
  Rng rng(6);
  const Learner l = make_learner(tiny_hp(), 3);
  Batch b = random_batch(rng, 16);
  const nn::Vec y0 = td_target(b, l.actor.target, l.critics.target, {0, 1}, 0.0, 0.2, 0.5, rng);
  EXPECT_EQ(y0, b.reward);
  b.done.setOnes();
  const nn::Vec yd = td_target(b, l.actor.target, l.critics.target, {1, 0}, 0.99, 0.2, 0.5, rng);
  EXPECT_EQ(yd, b.reward);
}

TEST(TdTarget, InvalidPairIsStructured) {
  Rng rng(6);
  const Learner l = make_learner(tiny_hp(), 3);
  const Batch b = random_batch(rng, 4);
  EXPECT_THROW(td_target(b, l.actor.target, l.critics.target, {0, 0}, 0.9, 0.2, 0.5, rng), Error);
  EXPECT_THROW(td_target(b, l.actor.target, l.critics.target, {0, 2}, 0.9, 0.2, 0.5, rng), Error);
}

TEST(TdTarget, SmoothingNoiseClipped) {
  Rng rng(7);
  const nn::Mat eps = smoothing_noise(10000, 1.0, 0.5, rng);
  EXPECT_LE(eps.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_GT(eps.cwiseAbs().maxCoeff(), 0.49);
  EXPECT_TRUE(smoothing_noise(5, 0.0, 0.5, rng).isZero(0));
}

TEST(TdTarget, TwoCriticsFixedPairIsStandardTd3) {
  Rng rng(8);
  RLHyperparams hp = tiny_hp();
  const Learner l = make_learner(hp, 4);
  const Batch b = random_batch(rng, 32);
  const nn::Mat eps = smoothing_noise(32, 0.2, 0.5, rng);
  const nn::Vec y = td_target_with_noise(b, l.actor.target, l.critics.target, {0, 1}, 0.99, eps);
  // Standard clipped double-Q written directly in matrix form.
  const nn::Mat a2 = (nn::forward_batch(l.actor.target, b.next_obs) + eps).cwiseMax(-1.0).cwiseMin(1.0);
  const nn::Vec q1 = q_values(l.critics.target[0], b.next_obs, a2);
  const nn::Vec q2 = q_values(l.critics.target[1], b.next_obs, a2);
  for (Eigen::Index j = 0; j < 32; ++j)
    EXPECT_EQ(y[j], b.reward[j] + 0.99 * (1.0 - b.done[j]) * std::min(q1[j], q2[j]));
  EXPECT_EQ(y, td_target_with_noise(b, l.actor.target, l.critics.target, {1, 0}, 0.99, eps));
}

TEST(Gradients, CriticMatchesFiniteDifferences) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    RLHyperparams hp = tiny_hp();
    hp.hidden = {1 + static_cast<int>(trial % 5)};
    const Learner l = make_learner(hp, trial);
    Rng rng(trial);
    const Batch b = random_batch(rng, 5);
    nn::Vec y(5);
    for (int j = 0; j < 5; ++j) y[j] = uniform(rng, -1, 1);
    const auto g = critic_gradient(l.critics.online[0], b, y);
    const auto r = testing_support::check_gradient(l.critics.online[0], g,
                                                   [&](const nn::Mlp& net) { return critic_loss(net, b, y); });
    EXPECT_TRUE(r.ok) << trial << " " << r.worst_relative << " " << r.where;
  }
}

TEST(Gradients, ActorThroughCriticMatchesFiniteDifferences) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    RLHyperparams hp = tiny_hp();
    hp.hidden = {2 + static_cast<int>(trial % 4)};
    const Learner l = make_learner(hp, trial + 50);
    Rng rng(trial);
    nn::Mat obs(env::kObservationDim, 4);
    for (Eigen::Index i = 0; i < obs.size(); ++i) obs.data()[i] = uniform(rng, -1, 1);
    std::vector<const nn::Mlp*> qs{&l.critics.online[0]};
    if (trial % 2) qs.push_back(&l.critics.online[1]);
    const auto g = actor_gradient(l.actor.online, qs, obs);
    const auto r = testing_support::check_gradient(l.actor.online, g,
                                                   [&](const nn::Mlp& net) { return actor_loss(net, qs, obs); });
    EXPECT_TRUE(r.ok) << trial << " " << r.worst_relative << " " << r.where;
  }
}

TEST(Update, RepeatedTerminalRewardConvergesToOne) {
  RLHyperparams hp = tiny_hp();
  hp.hidden = {16, 16};
  Learner l = make_learner(hp, 2);
  Rng rng(1);
  const Transition t{random_obs(rng), random_action(rng), 1.0, random_obs(rng), true};
  ReplayBuffer b(16);
  for (int i = 0; i < 8; ++i) b.add(t);
  for (int i = 0; i < 2000; ++i) update(l, b);
  for (const auto& c : l.critics.online) EXPECT_NEAR(q_value(c, t.obs, t.action), 1.0, 0.05);
}

TEST(Update, OneSmallCriticStepLowersTdLoss) {
  RLHyperparams hp = tiny_hp();
  const Learner l = make_learner(hp, 5);
  Rng rng(5);
  const Batch b = random_batch(rng, 32);
  const nn::Vec y = td_target(b, l.actor.target, l.critics.target, {0, 1}, 0.99, 0.2, 0.5, rng);
  nn::Mlp critic = l.critics.online[0];
  auto adam = nn::AdamState::for_network(critic);
  const double before = critic_loss(critic, b, y);
  nn::adam_step(adam, critic, critic_gradient(critic, b, y), 1e-4);
  EXPECT_LT(critic_loss(critic, b, y), before);
}

TEST(Update, CriticStepLeavesActorAndActorStepLeavesCritics) {
  RLHyperparams hp = tiny_hp();
  hp.policy_delay = 1000;
  Rng rng(1);
  ReplayBuffer buf(100);
  for (int i = 0; i < 50; ++i) buf.add(random_transition(rng));
  Learner critic_only = make_learner(hp, 7);
  const nn::Mlp actor_before = critic_only.actor.online;
  const auto d = update(critic_only, buf);
  EXPECT_FALSE(d.actor_updated);
  EXPECT_EQ(critic_only.actor.online, actor_before);

  hp.policy_delay = 1;
  Learner with_actor = make_learner(hp, 7);
  const auto d2 = update(with_actor, buf);
  EXPECT_TRUE(d2.actor_updated);
  EXPECT_NE(with_actor.actor.online, actor_before);
  // The critic step is identical; the actor step does not touch critics.
  for (std::size_t e = 0; e < 2; ++e) EXPECT_EQ(with_actor.critics.online[e], critic_only.critics.online[e]);
}

TEST(Update, TargetsAreExactEmaAfterActorStep) {
  RLHyperparams hp = tiny_hp();
  hp.policy_delay = 1;
  Rng rng(1);
  ReplayBuffer buf(100);
  for (int i = 0; i < 50; ++i) buf.add(random_transition(rng));
  Learner l = make_learner(hp, 8);
  const nn::Mlp old_actor_target = l.actor.target;
  const nn::Mlp old_critic_target = l.critics.target[1];
  update(l, buf);
  nn::Mlp expect_actor = old_actor_target;
  nn::ema_update(expect_actor, l.actor.online, hp.tau);
  EXPECT_EQ(l.actor.target, expect_actor);
  nn::Mlp expect_critic = old_critic_target;
  nn::ema_update(expect_critic, l.critics.online[1], hp.tau);
  EXPECT_EQ(l.critics.target[1], expect_critic);
}

TEST(Update, PolicyDelayAndCriticStepCounts) {
  RLHyperparams hp = tiny_hp();
  hp.critic_updates = 3;
  hp.policy_delay = 2;
  Rng rng(1);
  ReplayBuffer buf(100);
  for (int i = 0; i < 50; ++i) buf.add(random_transition(rng));
  Learner l = make_learner(hp, 9);
  const auto d = update(l, buf);
  EXPECT_EQ(d.target_pairs.size(), 3u);
  EXPECT_EQ(l.critic_steps, 3);
  EXPECT_EQ(l.updates, 1);
  ReplayBuffer small(100);
  small.add(random_transition(rng));
  EXPECT_THROW(update(l, small), Error);
}

TEST(Learner, InitShapesAndDeterminism) {
  RLHyperparams hp;
  hp.ensemble_size = 5;
  const Learner a = make_learner(hp, 11);
  const Learner b = make_learner(hp, 11);
  EXPECT_TRUE(a == b);
  ASSERT_EQ(a.critics.size(), 5);
  for (const auto& c : a.critics.online) {
    EXPECT_EQ(c.in_dim(), env::kObservationDim + env::kActionDim);
    EXPECT_EQ(c.out_dim(), 1);
  }
  EXPECT_EQ(a.actor.online, a.actor.target);
  EXPECT_NE(a.critics.online[0], a.critics.online[1]);
  EXPECT_FALSE(a == make_learner(hp, 12));
}

TEST(Learner, CheckpointRoundTripIncludingBuffer) {
  RLHyperparams hp = tiny_hp();
  hp.ensemble_size = 3;
  Rng rng(1);
  ReplayBuffer buf(100);
  for (int i = 0; i < 5; ++i) buf.add_demo(random_transition(rng));
  for (int i = 0; i < 40; ++i) buf.add(random_transition(rng));
  Learner l = make_learner(hp, 13);
  for (int i = 0; i < 5; ++i) update(l, buf);
  std::stringstream ss;
  write_learner(ss, l, &buf);
  const std::string bytes = ss.str();
  std::optional<ReplayBuffer> back_buf;
  Learner back = read_learner(ss, &back_buf);
  EXPECT_TRUE(back == l);
  ASSERT_TRUE(back_buf.has_value());
  EXPECT_EQ(*back_buf, buf);
  // Training continues identically from the restored state.
  update(l, buf);
  update(back, *back_buf);
  EXPECT_TRUE(back == l);
  std::stringstream bad(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_learner(bad), Error);
}

TEST(Diagnostics, ChannelDrainsFromAnotherThread) {
  DiagnosticsChannel ch;
  std::thread producer([&] {
    for (int i = 0; i < 1000; ++i) {
      UpdateDiagnostics d;
      d.update_index = i + 1;
      ch.push(d);
    }
  });
  std::vector<UpdateDiagnostics> got;
  while (got.size() < 1000) {
    auto part = ch.drain();
    got.insert(got.end(), part.begin(), part.end());
  }
  producer.join();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].update_index, static_cast<long long>(i + 1));
}
