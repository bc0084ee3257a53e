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

// Residual-state synthesis MDP.
//
// State s_t = U V_t^dag. Appending gate a gives V_{t+1} = a V_t, hence
// s_{t+1} = s_t a^dag, which depends on (s_t, a) only. The start state is
// the target itself and the goal is the identity up to global phase.

#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qflownet/canonical_key.hpp"
#include "qflownet/gate_algebra.hpp"

namespace qflownet {

struct RewardConfig {
  double success_reward = 100.0;
  double epsilon_reward = 1e-4;
  double fidelity_threshold = 0.999;
  int l_max = 12;

  void validate() const {
    if (!(epsilon_reward > 0.0) || !(success_reward > epsilon_reward)) {
      throw ConfigError("reward constants need success_reward > epsilon_reward > 0");
    }
    if (!(fidelity_threshold > 0.0 && fidelity_threshold < 1.0)) {
      throw ConfigError("fidelity_threshold must lie in (0, 1)");
    }
    if (l_max < 1) throw ConfigError("l_max must be >= 1");
  }
};

struct SynthesisState {
  UnitaryMatrix residual;
  int step_count = 0;
  std::vector<int> actions;
  std::vector<GateInstance> circuit_so_far;
};

inline SynthesisState reset(const UnitaryMatrix& target) {
  if (target.unitarity_error() >= kUnitarityTolerance) {
    throw ValidationError("reset: target is not unitary");
  }
  return SynthesisState{target, 0, {}, {}};
}

/// |tr(s)|/d, equal to F(U, V_t) by cyclicity of the trace.
inline double residual_fidelity(const UnitaryMatrix& residual) {
  return std::abs(residual.trace()) / static_cast<double>(residual.dim());
}

/// Strict inequality: a residual exactly at the threshold is not a success.
inline bool is_success(const UnitaryMatrix& residual, const RewardConfig& cfg) {
  return residual_fidelity(residual) > cfg.fidelity_threshold;
}

inline bool is_success(const SynthesisState& s, const RewardConfig& cfg) {
  return is_success(s.residual, cfg);
}

inline bool is_terminal(const SynthesisState& s, const RewardConfig& cfg) {
  return is_success(s, cfg) || s.step_count >= cfg.l_max;
}

/// s_{t+1} = s_t * a^dag.
inline SynthesisState step(const SynthesisState& s, const ActionSpace& space,
                           int action, const RewardConfig& cfg) {
  if (is_terminal(s, cfg)) {
    throw ContractViolation("step called on a terminal state");
  }
  if (action < 0 || static_cast<std::size_t>(action) >= space.size()) {
    throw ContractViolation("action " + std::to_string(action) +
                            " outside action space of size " +
                            std::to_string(space.size()));
  }
  SynthesisState next{s.residual * space.matrix_dagger(static_cast<std::size_t>(action)),
                      s.step_count + 1, s.actions, s.circuit_so_far};
  next.actions.push_back(action);
  next.circuit_so_far.push_back(space[static_cast<std::size_t>(action)]);
  return next;
}

/// Sparse terminal reward: R_success above the fidelity threshold, else epsilon.
inline double reward_for_fidelity(double terminal_fidelity, const RewardConfig& cfg) {
  return terminal_fidelity > cfg.fidelity_threshold ? cfg.success_reward
                                                    : cfg.epsilon_reward;
}

struct Trajectory {
  UnitaryMatrix target;
  std::vector<int> actions;
  /// s_0 ... s_f; always one longer than `actions`.
  std::vector<UnitaryMatrix> states;
  bool terminal = false;
  bool success = false;
  double terminal_fidelity = 0.0;
  double reward = 0.0;
  /// Forward log-probabilities recorded while sampling.
  std::vector<double> log_probs;

  std::size_t length() const { return actions.size(); }
};

inline double reward(const Trajectory& t, const RewardConfig& cfg) {
  if (!t.terminal) throw ContractViolation("reward of a non-terminal trajectory");
  return reward_for_fidelity(t.terminal_fidelity, cfg);
}

/// A policy maps a batch of residuals to a (states x actions) matrix of
/// forward log-probabilities.
template <class P>
concept ForwardPolicy = requires(const P& p, std::span<const UnitaryMatrix> states) {
  { p.log_probabilities(states) } -> std::convertible_to<Eigen::MatrixXd>;
  { p.num_actions() } -> std::convertible_to<std::size_t>;
};

class UniformPolicy {
 public:
  explicit UniformPolicy(std::size_t num_actions) : num_actions_(num_actions) {}
  std::size_t num_actions() const { return num_actions_; }
  Eigen::MatrixXd log_probabilities(std::span<const UnitaryMatrix> states) const {
    return Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(states.size()),
                                     static_cast<Eigen::Index>(num_actions_),
                                     -std::log(static_cast<double>(num_actions_)));
  }

 private:
  std::size_t num_actions_;
};

/// Inverse-CDF draw from one row of log-probabilities.
inline int sample_action(const Eigen::Ref<const Eigen::RowVectorXd>& log_probs, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double total = 0.0;
  for (Eigen::Index a = 0; a < log_probs.size(); ++a) total += std::exp(log_probs(a));
  double acc = 0.0;
  const double threshold = u * total;
  for (Eigen::Index a = 0; a < log_probs.size(); ++a) {
    acc += std::exp(log_probs(a));
    if (threshold < acc) return static_cast<int>(a);
  }
  // Rounding left u*total at or past the final partial sum; take the last
  // action with non-zero mass.
  for (Eigen::Index a = log_probs.size() - 1; a >= 0; --a) {
    if (std::exp(log_probs(a)) > 0.0) return static_cast<int>(a);
  }
  return 0;
}

/// Rolls out one trajectory per target in lockstep so each step issues a
/// single batched policy query. Success is checked before the first action
/// and after every step; episodes stop at the first success or at l_max.
/// Fresh draws are consumed in target order within each step.
template <ForwardPolicy Policy>
std::vector<Trajectory> rollout_batch(const Policy& policy, const ActionSpace& space,
                                      std::span<const UnitaryMatrix> targets,
                                      const RewardConfig& cfg, Rng& rng) {
  if (policy.num_actions() != space.size()) {
    throw ConfigError("policy emits " + std::to_string(policy.num_actions()) +
                      " actions but the action space has " +
                      std::to_string(space.size()));
  }
  std::vector<Trajectory> out;
  out.reserve(targets.size());
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Trajectory t{targets[k], {}, {targets[k]}, false, false, 0.0, 0.0, {}};
    if (is_success(targets[k], cfg)) {
      t.terminal = true;
    } else {
      active.push_back(k);
    }
    out.push_back(std::move(t));
  }
  std::vector<UnitaryMatrix> batch;
  for (int depth = 0; depth < cfg.l_max && !active.empty(); ++depth) {
    batch.clear();
    for (std::size_t k : active) batch.push_back(out[k].states.back());
    const Eigen::MatrixXd log_probs = policy.log_probabilities(batch);
    std::vector<std::size_t> still_active;
    for (std::size_t r = 0; r < active.size(); ++r) {
      Trajectory& t = out[active[r]];
      const int a = sample_action(log_probs.row(static_cast<Eigen::Index>(r)), rng);
      t.actions.push_back(a);
      t.log_probs.push_back(log_probs(static_cast<Eigen::Index>(r), a));
      t.states.push_back(t.states.back() * space.matrix_dagger(static_cast<std::size_t>(a)));
      if (is_success(t.states.back(), cfg) ||
          static_cast<int>(t.actions.size()) >= cfg.l_max) {
        t.terminal = true;
      } else {
        still_active.push_back(active[r]);
      }
    }
    active.swap(still_active);
  }
  for (auto& t : out) {
    t.terminal = true;
    t.terminal_fidelity = residual_fidelity(t.states.back());
    t.success = t.terminal_fidelity > cfg.fidelity_threshold;
    t.reward = reward_for_fidelity(t.terminal_fidelity, cfg);
  }
  return out;
}

template <ForwardPolicy Policy>
Trajectory rollout(const Policy& policy, const ActionSpace& space, const UnitaryMatrix& target,
                   const RewardConfig& cfg, Rng& rng) {
  return std::move(rollout_batch(policy, space, std::span(&target, 1), cfg, rng).front());
}

/// Debug dump line: {"target":hash,"actions":[...],"fidelity":F,"reward":R}.
inline nlohmann::json trajectory_to_json(const Trajectory& t) {
  return {{"target", canonical_key(t.target).hash()},
          {"actions", t.actions},
          {"fidelity", t.terminal_fidelity},
          {"reward", t.reward},
          {"success", t.success}};
}

}  // namespace qflownet
