// Copyright 2026 The QFlowNet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "qflownet/tb_trainer.hpp"
#include "support/gradcheck.hpp"

namespace qflownet {
namespace {

using testing::ToyMdp;

TEST(TbLoss, HandComputedUnderTheUniformPolicy) {
  const ToyMdp toy;
  // [Z] succeeds at once; [H, H] and [H, Z] end on the epsilon floor.
  const std::vector<Trajectory> batch{toy.trajectory({1}), toy.trajectory({0, 0}), toy.trajectory({0, 1})};
  EXPECT_TRUE(batch[0].success);
  EXPECT_FALSE(batch[1].success);
  const UniformPolicy u(2);
  const double log_z = 1.5;
  const double r0 = log_z + std::log(0.5) - std::log(100.0);
  const double r1 = log_z + 2.0 * std::log(0.5) - std::log(1e-4);
  const double expected = (r0 * r0 + 2.0 * r1 * r1) / 3.0;
  EXPECT_NEAR(tb_loss(batch, u, log_z, toy.reward), expected, 1e-12);
  EXPECT_NEAR(trajectory_log_prob(u, batch[1]), 2.0 * std::log(0.5), 1e-15);
  EXPECT_THROW(tb_loss(std::span<const Trajectory>(), u, log_z, toy.reward), ContractViolation);
}

TEST(TbLoss, ToyTrajectoriesAreEnumerated) {
  const ToyMdp toy;
  const auto all = toy.all_trajectories();
  ASSERT_EQ(all, (std::vector<std::vector<int>>{{0, 0}, {0, 1}, {1}}));
  double total = 0.0;
  for (const auto& seq : all) total += toy.reward_of(seq);
  EXPECT_NEAR(total, 100.0002, 1e-12);
}

TEST(TbLoss, GradientMatchesFiniteDifferences) {
  const ToyMdp toy;
  const EncoderConfig enc = EncoderConfig::reduced();
  Rng rng(3);
  PolicyParameters p = init_params(enc, toy.space, rng);
  p.log_z = 0.7;
  const std::vector<Trajectory> batch{toy.trajectory({1}), toy.trajectory({0, 1})};
  const auto r = testing::check_tb_gradient(batch, p, enc, toy.reward);
  EXPECT_EQ(r.checked, p.num_scalars());
  EXPECT_LT(r.worst_relative_error, 1e-4) << r.worst_parameter;
}

TEST(TbLoss, LogZGradientIsTwiceTheMeanResidual) {
  const ToyMdp toy;
  const EncoderConfig enc = EncoderConfig::reduced();
  Rng rng(1);
  const PolicyParameters p = init_params(enc, toy.space, rng);
  const std::vector<Trajectory> batch{toy.trajectory({1}), toy.trajectory({0, 0}), toy.trajectory({0, 1})};
  const LossAndGradient lg = tb_loss_and_gradient(batch, p, enc, toy.reward);
  double mean = 0.0;
  for (double r : lg.residuals) mean += r / 3.0;
  EXPECT_NEAR(lg.grad.log_z, 2.0 * mean, 1e-12);
  EXPECT_NEAR(lg.loss, tb_loss(batch, p, enc, toy.reward), 1e-12);
}

TEST(TbLoss, ChunkingDoesNotChangeTheGradient) {
  const ActionSpace space(GateSet::g1(), 2);
  const EncoderConfig enc = EncoderConfig::reduced();
  Rng rng(8);
  const PolicyParameters p = init_params(enc, space, rng);
  std::vector<UnitaryMatrix> targets;
  for (int k = 0; k < 7; ++k) targets.push_back(random_target(2, space, rng).matrix);
  RewardConfig rc;
  rc.l_max = 4;
  const auto batch = rollout_batch(UniformPolicy(space.size()), space, targets, rc, rng);
  const LossAndGradient whole = tb_loss_and_gradient(batch, p, enc, rc, 100);
  const LossAndGradient split = tb_loss_and_gradient(batch, p, enc, rc, 2);
  EXPECT_NEAR(whole.loss, split.loss, 1e-10);
  EXPECT_NEAR(global_norm(whole.grad), global_norm(split.grad), 1e-9);
  EXPECT_NEAR(whole.grad.stage1[0].qkv.weight(3, 2), split.grad.stage1[0].qkv.weight(3, 2), 1e-10);
}

TEST(TbLoss, RecordedRolloutGivesTheSameGradient) {
  const ActionSpace space(GateSet::g1(), 2);
  const EncoderConfig enc = EncoderConfig::reduced();
  Rng rng(12);
  const PolicyParameters p = init_params(enc, space, rng);
  std::vector<UnitaryMatrix> targets;
  for (int k = 0; k < 9; ++k) targets.push_back(random_target(1 + k % 3, space, rng).matrix);
  RewardConfig rc;
  rc.l_max = 4;
  const RecordingPolicy recorder(p, enc);
  const auto batch = rollout_batch(recorder, space, targets, rc, rng);
  const LossAndGradient direct = tb_loss_and_gradient(batch, p, enc, rc);
  const LossAndGradient recorded = tb_loss_and_gradient_recorded(batch, p, enc, rc, recorder);
  EXPECT_NEAR(direct.loss, recorded.loss, 1e-10);
  EXPECT_NEAR(direct.grad.log_z, recorded.grad.log_z, 1e-10);
  PolicyParameters diff = direct.grad;
  std::vector<Eigen::Map<const Eigen::VectorXd>> other;
  recorded.grad.for_each_tensor([&](const std::string&, const auto& t) { other.emplace_back(t.data(), t.size()); });
  std::size_t k = 0;
  double worst = 0.0;
  direct.grad.for_each_tensor([&](const std::string&, const auto& t) {
    worst = std::max(worst, (Eigen::Map<const Eigen::VectorXd>(t.data(), t.size()) - other[k++]).cwiseAbs().maxCoeff());
  });
  EXPECT_LT(worst, 1e-10);
  // The recorded log-probabilities are the ones used when sampling.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double sum = 0.0;
    for (double lp : batch[i].log_probs) sum += lp;
    EXPECT_NEAR(sum, direct.log_pf[i], 1e-10);
  }
}

TEST(Adam, FirstStepMovesEachParameterByTheStepSize) {
  const ActionSpace space(GateSet::g1(), 1, true);
  Rng rng(2);
  PolicyParameters p = init_params(EncoderConfig::reduced(), space, rng);
  const PolicyParameters before = p;
  PolicyParameters g = p.zeros_like();
  g.head_out.weight(0, 0) = 3.0;
  g.head_out.weight(1, 0) = -0.5;
  g.log_z = -2.0;
  OptimizerState opt = OptimizerState::for_params(p);
  adam_update(p, opt, g, 1e-3, 1e-2);
  EXPECT_NEAR(p.head_out.weight(0, 0), before.head_out.weight(0, 0) - 1e-3, 1e-9);
  EXPECT_NEAR(p.head_out.weight(1, 0), before.head_out.weight(1, 0) + 1e-3, 1e-9);
  EXPECT_EQ(p.head_out.weight(2, 0), before.head_out.weight(2, 0));
  EXPECT_NEAR(p.log_z, before.log_z + 1e-2, 1e-9);
  EXPECT_EQ(opt.step, 1);
  EXPECT_NEAR(opt.first_moment.log_z, -0.2, 1e-15);
}

TEST(Adam, MatchesAScalarReference) {
  PolicyParameters p = init_params(EncoderConfig::reduced(), ActionSpace(GateSet::g1(), 1, true), *std::make_unique<Rng>(1));
  OptimizerState opt = OptimizerState::for_params(p);
  double x = p.log_z, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -1.2, 0.7, 2.0, -0.1};
  PolicyParameters g = p.zeros_like();
  for (int t = 1; t <= 5; ++t) {
    g.log_z = grads[t - 1];
    adam_update(p, opt, g, 0.0, 0.05);
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p.log_z, x, 1e-14);
}

TEST(Adam, GlobalNormClipping) {
  PolicyParameters g = init_params(EncoderConfig::reduced(), ActionSpace(GateSet::g1(), 1, true), *std::make_unique<Rng>(1)).zeros_like();
  g.log_z = 30.0;
  g.stem.bias(0) = 40.0;
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), 50.0);
  EXPECT_NEAR(global_norm(g), 10.0, 1e-12);
  EXPECT_NEAR(g.log_z, 6.0, 1e-12);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 100.0), 10.0);
  EXPECT_NEAR(g.log_z, 6.0, 1e-12);
}

TEST(Replay, FifoEvictionAndUniformSampling) {
  const ToyMdp toy;
  ReplayBuffer buf(2);
  buf.push(toy.trajectory({1}));
  buf.push(toy.trajectory({0, 0}));
  buf.push(toy.trajectory({0, 1}));
  EXPECT_EQ(buf.size(), 2u);
  Rng rng(1);
  int seen_z = 0, seen_hh = 0, seen_hz = 0;
  for (const auto& t : buf.sample(2000, rng)) {
    if (t.actions == std::vector<int>{1}) ++seen_z;
    if (t.actions == std::vector<int>{0, 0}) ++seen_hh;
    if (t.actions == std::vector<int>{0, 1}) ++seen_hz;
  }
  EXPECT_EQ(seen_z, 0);
  EXPECT_NEAR(seen_hh / 2000.0, 0.5, 0.05);
  EXPECT_EQ(seen_hh + seen_hz, 2000);
  EXPECT_THROW(ReplayBuffer(4).sample(1, rng), ContractViolation);
}

TEST(Training, TrainStepReducesLossOnTheToyProblem) {
  const ToyMdp toy;
  TrainConfig cfg;
  cfg.gate_set = "custom:H,Z";
  cfg.num_qubits = 1;
  cfg.encoder = EncoderConfig::reduced();
  cfg.reward = toy.reward;
  cfg.learning_rate = 1e-3;
  Rng prng(1), rng(2);
  PolicyParameters p = init_params(cfg.encoder, toy.space, prng);
  OptimizerState opt = OptimizerState::for_params(p);
  const std::vector<UnitaryMatrix> targets(32, toy.target);
  double first = 0.0, last = 0.0;
  for (int k = 0; k < 300; ++k) {
    const StepMetrics m = train_step_on(targets, p, opt, toy.space, cfg, rng);
    if (k < 10) first += m.loss / 10.0;
    if (k >= 290) last += m.loss / 10.0;
  }
  EXPECT_LT(last, 0.2 * first);
  EXPECT_GT(p.log_z, 2.0);
}

TEST(Training, ReplayMixingKeepsTheBatchSize) {
  const ToyMdp toy;
  TrainConfig cfg;
  cfg.gate_set = "custom:H,Z";
  cfg.num_qubits = 1;
  cfg.encoder = EncoderConfig::reduced();
  cfg.reward = toy.reward;
  cfg.replay.enabled = true;
  cfg.replay.capacity = 8;
  Rng prng(1), rng(2);
  PolicyParameters p = init_params(cfg.encoder, toy.space, prng);
  OptimizerState opt = OptimizerState::for_params(p);
  ReplayBuffer replay(cfg.replay.capacity);
  const std::vector<UnitaryMatrix> targets(6, toy.target);
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(std::isfinite(train_step_on(targets, p, opt, toy.space, cfg, rng, &replay).loss));
  EXPECT_EQ(replay.size(), 8u);
}

TEST(Training, MetricsRowsUseAFixedFormat) {
  StepMetrics m{12, 0.5, 0.25, 1.0 / 3.0, 4.0, 0.0};
  EXPECT_EQ(metrics_csv_row(m), "12,0.5,0.25,0.3333333333,4\n");
  Rng a(5);
  a.discard(17);
  Rng b = rng_from_state_string(rng_state_string(a));
  EXPECT_EQ(a(), b());
  EXPECT_THROW(rng_from_state_string("not a state"), ValidationError);
}

}  // namespace
}  // namespace qflownet
