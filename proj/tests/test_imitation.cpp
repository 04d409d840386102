#include <gtest/gtest.h>

#include <sstream>

#include "planrl/imitation.hpp"
#include "test_support.hpp"
#include "oracles.hpp"

using namespace planrl;

using namespace oracles;

TEST(BCLoss, ZeroWhenOutputsMatch) {
  const BCPolicy p = random_policy(1);
  Rng rng(2);
  const nn::Mat obs = random_matrix(rng, env::kObservationDim, 5);
  const nn::Mat act = nn::forward_batch(p.net, p.norm.apply(obs));
  EXPECT_EQ(bc_loss(p, obs, act), 0.0);
}

TEST(BCLoss, SinglePairIsSquaredDistance) {
  const BCPolicy p = random_policy(3);
  Rng rng(4);
  const nn::Vec s = random_matrix(rng, env::kObservationDim, 1);
  const nn::Vec a = random_matrix(rng, env::kActionDim, 1);
  const nn::Vec pred = bc_act(p, s);
  EXPECT_NEAR(bc_loss(p, nn::Mat(s), nn::Mat(a)), (pred - a).squaredNorm(), 1e-15);
}

TEST(BCLoss, MatchesSummationOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const BCPolicy p = random_policy(seed + 10);
    Rng rng(seed);
    const nn::Mat obs = random_matrix(rng, env::kObservationDim, 8);
    const nn::Mat act = random_matrix(rng, env::kActionDim, 8);
    double sum = 0.0;
    for (int j = 0; j < 8; ++j) {
      const nn::Vec pred = bc_act(p, nn::Vec(obs.col(j)));
      for (int k = 0; k < env::kActionDim; ++k) sum += (pred[k] - act(k, j)) * (pred[k] - act(k, j));
    }
    EXPECT_NEAR(bc_loss(p, obs, act), sum / 8.0, 1e-12);
  }
}

TEST(BCLoss, EmptyBatchIsStructured) {
  const BCPolicy p = random_policy(1);
  EXPECT_THROW(bc_loss(p, nn::Mat(env::kObservationDim, 0), nn::Mat(env::kActionDim, 0)), Error);
}

TEST(BCGradient, MatchesFiniteDifferencesOnTinyNets) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 500);
    const int in = 2 + static_cast<int>(uniform_index(rng, 5));
    BCPolicy p = random_policy(seed, in, {1 + static_cast<int>(uniform_index(rng, 6))});
    const nn::Mat obs = random_matrix(rng, in, 6);
    const nn::Mat act = random_matrix(rng, env::kActionDim, 6);
    const auto g = bc_gradient(p, obs, act);
    const auto r = testing_support::check_gradient(p.net, g, [&](const nn::Mlp& net) {
      BCPolicy q{net, p.norm};
      return bc_loss(q, obs, act);
    });
    EXPECT_TRUE(r.ok) << "seed " << seed << " rel " << r.worst_relative << " at " << r.where;
  }
}

TEST(BCGradient, ProportionalToUnitGaussianNll) {
  // Mean NLL with unit variance is 0.5 * mse + const, so its gradient is
  // exactly half of the bc_loss gradient.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const BCPolicy p = random_policy(seed + 40);
    Rng rng(seed);
    const nn::Mat obs = random_matrix(rng, env::kObservationDim, 7);
    const nn::Mat act = random_matrix(rng, env::kActionDim, 7);
    nn::ForwardCache cache;
    const nn::Mat mu = nn::forward_batch(p.net, p.norm.apply(obs), &cache);
    const auto nll = nn::backward_batch(p.net, cache, (mu - act) / 7.0);
    const auto mse = bc_gradient(p, obs, act);
    for (std::size_t l = 0; l < nll.weight.size(); ++l) {
      EXPECT_TRUE((2.0 * nll.weight[l]).isApprox(mse.weight[l], 1e-12));
      EXPECT_TRUE((2.0 * nll.bias[l]).isApprox(mse.bias[l], 1e-12));
    }
  }
}

TEST(BCAct, DeterministicAndBounded) {
  const BCPolicy p = random_policy(5);
  Rng rng(6);
  for (int k = 0; k < 500; ++k) {
    const nn::Vec s = random_matrix(rng, env::kObservationDim, 1, -50, 50);
    const auto a = bc_act(p, s);
    EXPECT_EQ(a, bc_act(p, s));
    EXPECT_LE(a.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(BCAct, ZeroNetOnMeanStateGivesZero) {
  BCPolicy p = random_policy(7);
  for (auto& l : p.net.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  EXPECT_EQ(bc_act(p, p.norm.mean), env::Action::Zero());
}

TEST(BCTrain, MemorizesSingleState) {
  nn::Mat obs(env::kObservationDim, 1);
  obs.setConstant(0.3);
  nn::Mat act(env::kActionDim, 1);
  act << 0.5, -0.25, 0.1, -0.9;
  BCConfig cfg;
  cfg.epochs = 400;
  const auto r = train_bc(obs, act, cfg);
  EXPECT_LT(r.epoch_loss.back(), 1e-4);
}

TEST(BCTrain, LossNonIncreasingOnOneTrajectory) {
  const env::World w = env::default_world(env::TaskId::ReachLift);
  expert::DemoDataset ds = expert::generate_demos(w, 1, 4);
  BCConfig cfg;
  cfg.epochs = 100;
  cfg.batch_size = 1 << 20;  // one full batch per epoch
  cfg.lr = 3e-4;
  const auto r = train_bc(ds, cfg);
  ASSERT_LE(r.epoch_loss.front(), r.initial_loss);
  for (std::size_t i = 1; i < r.epoch_loss.size(); ++i) EXPECT_LE(r.epoch_loss[i], r.epoch_loss[i - 1]) << i;
}

TEST(BCTrain, ReachLiftTenDemosLossDropsTenfold) {
  const env::World w = env::default_world(env::TaskId::ReachLift);
  const auto ds = expert::generate_demos(w, 10, 1);
  const auto r = train_bc(ds, BCConfig{});
  EXPECT_LE(r.epoch_loss.back() * 10.0, r.initial_loss);
}

TEST(BCTrain, SameSeedIdenticalCheckpointBytes) {
  const env::World w = env::default_world(env::TaskId::ReachLift);
  const auto ds = expert::generate_demos(w, 3, 1);
  BCConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 9;
  std::stringstream a, b;
  write_bc(a, train_bc(ds, cfg).policy);
  write_bc(b, train_bc(ds, cfg).policy);
  EXPECT_EQ(a.str(), b.str());
  cfg.seed = 10;
  std::stringstream c;
  write_bc(c, train_bc(ds, cfg).policy);
  EXPECT_NE(a.str(), c.str());
}

TEST(BCCheckpoint, RoundTrip) {
  const BCPolicy p = random_policy(12);
  std::stringstream ss;
  write_bc(ss, p);
  EXPECT_EQ(read_bc(ss), p);
  testing_support::TempDir dir("bc");
  save_bc(dir / "bc.bin", p);
  EXPECT_EQ(load_bc(dir / "bc.bin"), p);
  std::stringstream junk("PLRLMLP1garbage");
  EXPECT_THROW(read_bc(junk), Error);
}

TEST(BCNormalizer, ConstantDimensionsKeepUnitScale) {
  nn::Mat x(2, 4);
  x << 1, 2, 3, 4, 5, 5, 5, 5;
  const auto n = Normalizer::fit(x);
  EXPECT_DOUBLE_EQ(n.mean[0], 2.5);
  EXPECT_DOUBLE_EQ(n.stddev[0], std::sqrt(1.25));
  EXPECT_EQ(n.stddev[1], 1.0);
  EXPECT_TRUE(n.apply(x).row(1).isZero(0));
}
