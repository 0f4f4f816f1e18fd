#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "remax/checkpoint.hpp"
#include "remax/maddpg.hpp"

using namespace remax;
using namespace remax::maddpg;
using nn::Matrix;
using nn::MlpParams;
using nn::Vector;

namespace {

MaddpgConfig small_config() {
  MaddpgConfig c;
  c.hidden = {8, 8};
  c.batch_size = 16;
  c.buffer_capacity = 1000;
  return c;
}

Transition random_transition(int n, Rng& rng) {
  Transition t{Vector(4 * n), Vector(5 * n), Vector(n), Vector(4 * n)};
  for (auto& v : t.obs) v = rng.uniform(-1.0, 1.0);
  for (auto& v : t.action) v = rng.uniform(0.0, 1.0);
  for (auto& v : t.rewards) v = rng.bernoulli(0.2) ? 1.0 : 0.0;
  for (auto& v : t.next_obs) v = rng.uniform(-1.0, 1.0);
  return t;
}

Minibatch single(const Transition& t) {
  return {Matrix(t.obs), Matrix(t.action), Matrix(t.rewards), Matrix(t.next_obs)};
}

bool params_equal(const MlpParams& a, const MlpParams& b) {
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    if (a.layers[l].weight != b.layers[l].weight || a.layers[l].bias != b.layers[l].bias) return false;
  return true;
}

bool learners_equal(const LearnerSet& a, const LearnerSet& b) {
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    const auto &x = a.agents[i], &y = b.agents[i];
    if (!params_equal(x.policy, y.policy) || !params_equal(x.critic, y.critic) ||
        !params_equal(x.target_policy, y.target_policy) || !params_equal(x.target_critic, y.target_critic))
      return false;
    if (x.policy_opt.step != y.policy_opt.step || x.critic_opt.step != y.critic_opt.step) return false;
    for (std::size_t k = 0; k < x.critic_opt.m.size(); ++k)
      if (x.critic_opt.m[k] != y.critic_opt.m[k] || x.critic_opt.v[k] != y.critic_opt.v[k]) return false;
  }
  return true;
}

bool is_zero(const MlpParams& g) {
  for (const auto& l : g.layers)
    if (!l.weight.isZero(0.0) || !l.bias.isZero(0.0)) return false;
  return true;
}

}  // namespace

TEST(Learners, ShapesAndTargetCopies) {
  Rng rng(1);
  auto ls = make_learners(2, 8, MaddpgConfig{}, rng);
  ASSERT_EQ(ls.agents.size(), 2u);
  const auto& a = ls.agents[0];
  EXPECT_EQ(a.policy.spec.layer_sizes, (std::vector<int>{8, 64, 64, 5}));
  EXPECT_EQ(a.critic.spec.layer_sizes, (std::vector<int>{18, 64, 64, 1}));
  EXPECT_EQ(a.policy.spec.output, nn::OutputKind::softmax);
  EXPECT_TRUE(params_equal(a.policy, a.target_policy));
  EXPECT_TRUE(params_equal(a.critic, a.target_critic));
  EXPECT_FALSE(params_equal(ls.agents[0].policy, ls.agents[1].policy));
}

TEST(Act, NoiselessIsRepeatable) {
  Rng rng(2);
  auto ls = make_learners(2, 8, small_config(), rng);
  const Vector o = Vector::Random(8);
  Rng r1(3), r2(4);
  EXPECT_EQ(act(ls, o, 0.0, r1), act(ls, o, 0.0, r2));
  EXPECT_EQ(act(ls, o, 0.0, r1), policy_actions(ls, o));
}

TEST(Act, FreshPolicyOnZeroInputIsUniform) {
  Rng rng(5);
  auto ls = make_learners(1, 4, MaddpgConfig{}, rng);
  const Vector a = act(ls, Vector::Zero(4), 0.0, rng);
  for (Eigen::Index k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(a[k], 0.2);
}

TEST(Act, NoiseIsCenteredOnPolicyOutput) {
  Rng rng(6);
  auto ls = make_learners(2, 8, small_config(), rng);
  const Vector o = Vector::Random(8);
  const Vector clean = policy_actions(ls, o);
  Vector sum = Vector::Zero(clean.size());
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) sum += add_exploration_noise(clean, 0.1, rng);
  EXPECT_LT((sum / draws - clean).cwiseAbs().maxCoeff(), 0.01);
  for (int k = 0; k < 100; ++k) {
    const Vector a = act(ls, o, 0.3, rng);
    EXPECT_GE(a.minCoeff(), 0.0);
    EXPECT_LE(a.maxCoeff(), 1.0);
  }
}

TEST(Act, NoiseAnnealing) {
  MaddpgConfig c;
  EXPECT_DOUBLE_EQ(noise_scale(c, 1, 1000), 0.3);
  EXPECT_NEAR(noise_scale(c, 251, 1000), 0.15, 1e-15);
  EXPECT_DOUBLE_EQ(noise_scale(c, 501, 1000), 0.0);
  EXPECT_DOUBLE_EQ(noise_scale(c, 900, 1000), 0.0);
}

TEST(Critic, ZeroNetworksZeroRewardsGiveZeroLoss) {
  Rng rng(7);
  auto c = small_config();
  c.gamma = 0.0;
  auto ls = make_learners(1, 4, c, rng);
  auto& a = ls.agents[0];
  a.critic = a.target_critic = MlpParams::zeros(a.critic.spec);
  auto t = random_transition(1, rng);
  t.rewards.setZero();
  const auto b = single(t);
  const auto before = a.critic;
  EXPECT_EQ(critic_update(ls, 0, b, target_actions(ls, b.next_obs)), 0.0);
  EXPECT_TRUE(params_equal(a.critic, before));
}

TEST(Critic, HandToyTdTarget) {
  Rng rng(8);
  auto ls = make_learners(1, 4, small_config(), rng);
  auto& a = ls.agents[0];
  a.critic = oracle::constant_net({9, 8, 8, 1}, 1.0);
  a.target_critic = oracle::constant_net({9, 8, 8, 1}, 2.0);
  auto t = random_transition(1, rng);
  t.rewards << 0.0;
  const auto b = single(t);
  const Matrix next = target_actions(ls, b.next_obs);
  EXPECT_NEAR(td_targets(ls, 0, b, next)(0, 0), 1.9, 1e-15);
  EXPECT_NEAR(critic_update(ls, 0, b, next), 0.81, 1e-12);
}

TEST(Critic, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  auto ls = make_learners(2, 8, small_config(), rng);
  ReplayBuffer buf(8, 10, 2, 100);
  for (int k = 0; k < 20; ++k) buf.add(random_transition(2, rng));
  const auto b = buf.sample(8, rng);
  const Matrix next = target_actions(ls, b.next_obs);
  auto& critic = ls.agents[1].critic;
  const Matrix y = td_targets(ls, 1, b, next);
  auto loss = [&] {
    return (nn::evaluate(critic, stack(b.obs, b.actions)) - y).squaredNorm() / static_cast<double>(b.size());
  };
  auto f = nn::forward(critic, stack(b.obs, b.actions));
  const Matrix up = (2.0 / b.size()) * (f.output - y);
  const auto g = nn::backward(critic, f.tape, up);
  EXPECT_LT(oracle::worst_param_error(critic, g.params, loss), 1e-4);
}

TEST(Critic, RepeatedUpdatesOnOneTransitionDoNotIncreaseLoss) {
  Rng rng(10);
  auto c = small_config();
  c.critic_lr = 1e-3;
  auto ls = make_learners(1, 4, c, rng);
  auto t = random_transition(1, rng);
  t.rewards << 1.0;
  const auto b = single(t);
  const Matrix next = target_actions(ls, b.next_obs);
  double prev = critic_update(ls, 0, b, next);
  for (int k = 1; k < 100; ++k) {
    const double l = critic_update(ls, 0, b, next);
    EXPECT_LE(l, prev + 1e-12) << "step " << k;
    prev = l;
  }
}

TEST(Critic, ZeroRewardsConvergeToZeroQ) {
  Rng rng(11);
  auto c = small_config();
  c.hidden = {64, 64};
  c.gamma = 0.0;
  c.batch_size = 64;
  auto ls = make_learners(1, 4, c, rng);
  ReplayBuffer buf(4, 5, 1, 5000);
  for (int k = 0; k < 5000; ++k) {
    auto t = random_transition(1, rng);
    t.rewards.setZero();
    buf.add(t);
  }
  for (int k = 0; k < 2000; ++k) {
    const auto b = buf.sample(64, rng);
    critic_update(ls, 0, b, target_actions(ls, b.next_obs));
  }
  const auto probe = buf.sample(1000, rng);
  EXPECT_LT(nn::evaluate(ls.agents[0].critic, stack(probe.obs, probe.actions)).cwiseAbs().mean(), 0.05);
}

TEST(Actor, ConstantCriticGivesZeroGradient) {
  Rng rng(12);
  auto c = small_config();
  c.logit_penalty = 0.0;
  auto ls = make_learners(1, 4, c, rng);
  ls.agents[0].critic = oracle::constant_net({9, 8, 8, 1}, 3.5);
  const auto b = single(random_transition(1, rng));
  const auto g = actor_gradient(ls, 0, b);
  EXPECT_DOUBLE_EQ(g.objective, 3.5);
  EXPECT_TRUE(is_zero(g.grads));
}

TEST(Actor, LinearCriticOnActionOneIncreasesIt) {
  Rng rng(13);
  auto ls = make_learners(1, 4, small_config(), rng);
  // Q(o, a) = a[1]; the critic input is [o; a]
  ls.agents[0].critic = oracle::pick_input_net({9, 8, 8, 1}, 4 + 1);
  ReplayBuffer buf(4, 5, 1, 100);
  for (int k = 0; k < 64; ++k) buf.add(random_transition(1, rng));
  const auto b = buf.sample(64, rng);
  const double before = nn::evaluate(ls.agents[0].policy, b.obs).row(1).mean();
  const double objective = actor_update(ls, 0, b);
  EXPECT_NEAR(objective, before, 1e-12);
  const double after = nn::evaluate(ls.agents[0].policy, b.obs).row(1).mean();
  EXPECT_GT(after, before);
}

TEST(Actor, GradientMatchesFiniteDifferencesTwoAgents) {
  Rng rng(14);
  for (double penalty : {0.0, 1e-3, 0.5}) {
    auto c = small_config();
    c.logit_penalty = penalty;
    auto ls = make_learners(2, 8, c, rng);
    for (auto& l : ls.agents[1].policy.layers) l.bias = 0.3 * Vector::Random(l.bias.size());
    ReplayBuffer buf(8, 10, 2, 100);
    for (int k = 0; k < 20; ++k) buf.add(random_transition(2, rng));
    const auto b = buf.sample(6, rng);
    auto& policy = ls.agents[1].policy;
    // objective minus penalty on the mean squared pre-softmax logits, written out directly
    auto loss = [&] {
      auto f = nn::forward(policy, b.obs);
      Matrix joint = b.actions;
      joint.middleRows(5, 5) = f.output;
      const double q = nn::evaluate(ls.agents[1].critic, stack(b.obs, joint)).mean();
      const Matrix& z = f.tape.pre.back();
      return q - penalty * z.squaredNorm() / static_cast<double>(z.size());
    };
    const auto g = actor_gradient(ls, 1, b);
    EXPECT_LT(oracle::worst_param_error(policy, g.grads, loss), 1e-4) << "penalty " << penalty;
  }
}

TEST(SoftUpdate, TauEndpoints) {
  Rng rng(15);
  auto ls = make_learners(1, 4, small_config(), rng);
  auto& a = ls.agents[0];
  a.policy = nn::xavier_init(a.policy.spec, rng);
  a.critic = nn::xavier_init(a.critic.spec, rng);
  const auto tp = a.target_policy;
  soft_update_targets(ls, 0.0);
  EXPECT_TRUE(params_equal(a.target_policy, tp));
  soft_update_targets(ls, 1.0);
  EXPECT_TRUE(params_equal(a.target_policy, a.policy));
  EXPECT_TRUE(params_equal(a.target_critic, a.critic));
}

TEST(SoftUpdate, TargetLagClosedForm) {
  Rng rng(16);
  auto ls = make_learners(1, 4, small_config(), rng);
  auto& a = ls.agents[0];
  const double online = a.critic.layers[0].weight(0, 0) = 0.7;
  const double t0 = a.target_critic.layers[0].weight(0, 0) = -0.4;
  const double tau = 0.01;
  for (int k = 1; k <= 300; ++k) {
    soft_update_targets(ls, tau);
    const double decay = std::pow(1.0 - tau, k);
    ASSERT_NEAR(a.target_critic.layers[0].weight(0, 0), (1.0 - decay) * online + decay * t0, 1e-12);
  }
}

TEST(Replay, FifoEvictionAndOrder) {
  Rng rng(17);
  ReplayBuffer buf(4, 5, 1, 3);
  std::vector<Transition> ts;
  for (int k = 0; k < 5; ++k) {
    ts.push_back(random_transition(1, rng));
    buf.add(ts.back());
  }
  EXPECT_EQ(buf.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(buf.at(k).obs, ts[k + 2].obs);
  EXPECT_THROW(buf.sample(4, rng), ContractError);
  EXPECT_THROW(buf.add(random_transition(2, rng)), ContractError);
}

TEST(Replay, UniformSampling) {
  Rng rng(18);
  ReplayBuffer buf(4, 5, 1, 10);
  for (int k = 0; k < 10; ++k) {
    auto t = random_transition(1, rng);
    t.obs[0] = k;
    buf.add(t);
  }
  std::vector<int> counts(10, 0);
  for (int k = 0; k < 10000; ++k) {
    const auto b = buf.sample(10, rng);
    for (Eigen::Index c = 0; c < b.size(); ++c) ++counts[static_cast<std::size_t>(b.obs(0, c))];
  }
  const double n = 1e5, p = 0.1, sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_LT(std::abs(c - n * p), 3.0 * sigma);
}

TEST(Checkpoint, ReloadContinuesBitForBit) {
  const auto dir = std::filesystem::temp_directory_path() / "remax_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "c.ckpt").string();

  Rng rng(19);
  auto ls = make_learners(2, 8, small_config(), rng);
  ReplayBuffer buf(8, 10, 2, 1000);
  for (int k = 0; k < 200; ++k) buf.add(random_transition(2, rng));
  for (int k = 0; k < 5; ++k) update_round(ls, buf, rng);
  checkpoint::save(path, ls, rng, &buf);

  auto continue_run = [](LearnerSet& l, ReplayBuffer& b, Rng& r) {
    for (int k = 0; k < 10; ++k) {
      b.add(random_transition(2, r));
      update_round(l, b, r);
    }
  };
  continue_run(ls, buf, rng);

  Rng other(0);
  auto restored = make_learners(2, 8, small_config(), other);
  ReplayBuffer rbuf(8, 10, 2, 1000);
  Rng rrng(12345);
  checkpoint::load(path, restored, &rrng, &rbuf);
  continue_run(restored, rbuf, rrng);

  EXPECT_TRUE(learners_equal(ls, restored));
  EXPECT_TRUE(rng == rrng);
  EXPECT_EQ(buf.size(), rbuf.size());
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, MissingOrCorruptFileIsIoError) {
  Rng rng(20);
  auto ls = make_learners(1, 4, small_config(), rng);
  EXPECT_THROW(checkpoint::load("/nonexistent/x.ckpt", ls), IoError);
  const auto path = (std::filesystem::temp_directory_path() / "remax_bad.ckpt").string();
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint";
  }
  EXPECT_THROW(checkpoint::load(path, ls), IoError);
  std::filesystem::remove(path);
}

TEST(Properties, UpdateRoundIsDeterministic) {
  auto run = [] {
    Rng rng(21);
    auto ls = make_learners(2, 8, small_config(), rng);
    ReplayBuffer buf(8, 10, 2, 1000);
    for (int k = 0; k < 100; ++k) {
      buf.add(random_transition(2, rng));
      if (buf.size() >= 16) update_round(ls, buf, rng);
    }
    return ls;
  };
  EXPECT_TRUE(learners_equal(run(), run()));
}
