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

// Trajectory Balance training.
//
// Per trajectory tau with terminal reward R(tau):
//
//   loss(tau) = (log Z + sum_t log P_F(a_t | s_t) - log R(tau))^2
//
// The backward-policy term is taken as 1 (uniform backward policy dropped),
// so a converged policy samples complete gate sequences with probability
// R(tau) / Z. The batch loss is the arithmetic mean over trajectories.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qflownet/adam.hpp"
#include "qflownet/checkpoint.hpp"
#include "qflownet/config.hpp"
#include "qflownet/gate_algebra.hpp"
#include "qflownet/policy_net.hpp"
#include "qflownet/synthesis_env.hpp"

namespace qflownet {

/// Sum of log P_F over the taken actions, recomputed from the policy (not
/// the log-probabilities cached at sampling time). Empty trajectory -> 0.
template <ForwardPolicy Policy>
double trajectory_log_prob(const Policy& policy, const Trajectory& t) {
  if (t.actions.empty()) return 0.0;
  const Eigen::MatrixXd lp = policy.log_probabilities(std::span(t.states.data(), t.actions.size()));
  double total = 0.0;
  for (std::size_t k = 0; k < t.actions.size(); ++k) total += lp(static_cast<Eigen::Index>(k), t.actions[k]);
  return total;
}

inline double trajectory_log_prob(const PolicyParameters& p, const EncoderConfig& cfg, const Trajectory& t) {
  return trajectory_log_prob(NetworkPolicy(p, cfg), t);
}

inline double tb_residual(double log_z, double log_pf, const Trajectory& t, const RewardConfig& cfg) {
  return log_z + log_pf - std::log(reward(t, cfg));
}

template <ForwardPolicy Policy>
double tb_loss(std::span<const Trajectory> batch, const Policy& policy, double log_z, const RewardConfig& cfg) {
  if (batch.empty()) throw ContractViolation("tb_loss of an empty batch");
  double total = 0.0;
  for (const auto& t : batch) {
    const double r = tb_residual(log_z, trajectory_log_prob(policy, t), t, cfg);
    total += r * r;
  }
  return total / static_cast<double>(batch.size());
}

inline double tb_loss(std::span<const Trajectory> batch, const PolicyParameters& p, const EncoderConfig& enc,
                      const RewardConfig& cfg) {
  return tb_loss(batch, NetworkPolicy(p, enc), p.log_z, cfg);
}

struct LossAndGradient {
  double loss = 0.0;
  PolicyParameters grad;
  std::vector<double> log_pf;
  std::vector<double> residuals;
};

/// Mean TB loss and its gradient with respect to every tensor and log_z.
/// Trajectories are processed in chunks of `chunk` trajectories with one
/// cached forward pass and one backward pass per chunk.
inline LossAndGradient tb_loss_and_gradient(std::span<const Trajectory> batch, const PolicyParameters& p,
                                            const EncoderConfig& enc, const RewardConfig& cfg, int chunk = 32) {
  if (batch.empty()) throw ContractViolation("tb_loss of an empty batch");
  LossAndGradient out;
  out.grad = p.zeros_like();
  out.log_pf.assign(batch.size(), 0.0);
  out.residuals.assign(batch.size(), 0.0);
  const double inv_k = 1.0 / static_cast<double>(batch.size());
  const std::size_t step = static_cast<std::size_t>(std::max(1, chunk));

  std::vector<UnitaryMatrix> states;
  for (std::size_t start = 0; start < batch.size(); start += step) {
    const std::size_t stop = std::min(batch.size(), start + step);
    states.clear();
    for (std::size_t k = start; k < stop; ++k) {
      if (!batch[k].terminal) throw ContractViolation("tb_loss: trajectory is not terminal");
      states.insert(states.end(), batch[k].states.begin(),
                    batch[k].states.begin() + static_cast<std::ptrdiff_t>(batch[k].actions.size()));
    }
    PolicyNetwork::Cache cache;
    Matrix log_probs;
    if (!states.empty()) log_probs = PolicyNetwork::log_softmax(PolicyNetwork::logits(states, p, enc, cache));

    Matrix d_logits = Matrix::Zero(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(p.num_actions()));
    Eigen::Index row = 0;
    for (std::size_t k = start; k < stop; ++k) {
      const Trajectory& t = batch[k];
      double lpf = 0.0;
      for (std::size_t s = 0; s < t.actions.size(); ++s) lpf += log_probs(row + static_cast<Eigen::Index>(s), t.actions[s]);
      const double r = tb_residual(p.log_z, lpf, t, cfg);
      out.log_pf[k] = lpf;
      out.residuals[k] = r;
      out.loss += r * r * inv_k;
      const double g = 2.0 * r * inv_k;
      out.grad.log_z += g;
      // d log softmax(a) / d logits = onehot(a) - softmax.
      for (std::size_t s = 0; s < t.actions.size(); ++s) {
        const Eigen::Index rr = row + static_cast<Eigen::Index>(s);
        d_logits.row(rr) = -g * log_probs.row(rr).array().exp();
        d_logits(rr, t.actions[s]) += g;
      }
      row += static_cast<Eigen::Index>(t.actions.size());
    }
    if (!states.empty()) PolicyNetwork::backward(d_logits, p, enc, cache, out.grad);
  }
  return out;
}

/// Network policy that keeps the forward cache of every call, so the TB
/// gradient of an on-policy batch can reuse the rollout's forward passes.
class RecordingPolicy {
 public:
  RecordingPolicy(const PolicyParameters& params, const EncoderConfig& cfg) : params_(&params), cfg_(cfg) {}

  std::size_t num_actions() const { return params_->num_actions(); }

  Eigen::MatrixXd log_probabilities(std::span<const UnitaryMatrix> states) const {
    calls_.emplace_back();
    Call& c = calls_.back();
    if (!states.empty()) c.log_probs = PolicyNetwork::log_softmax(PolicyNetwork::logits(states, *params_, cfg_, c.cache));
    return c.log_probs;
  }

  struct Call {
    PolicyNetwork::Cache cache;
    Matrix log_probs;
  };
  std::vector<Call>& calls() const { return calls_; }

 private:
  const PolicyParameters* params_;
  EncoderConfig cfg_;
  mutable std::vector<Call> calls_;
};

/// Same result as tb_loss_and_gradient for a batch produced by
/// rollout_batch(recorder, ...): call s holds, in batch order, the states of
/// every trajectory with more than s actions.
inline LossAndGradient tb_loss_and_gradient_recorded(std::span<const Trajectory> batch, const PolicyParameters& p,
                                                     const EncoderConfig& enc, const RewardConfig& cfg,
                                                     const RecordingPolicy& recorder) {
  if (batch.empty()) throw ContractViolation("tb_loss of an empty batch");
  auto& calls = recorder.calls();
  LossAndGradient out;
  out.grad = p.zeros_like();
  out.log_pf.assign(batch.size(), 0.0);
  out.residuals.assign(batch.size(), 0.0);
  const double inv_k = 1.0 / static_cast<double>(batch.size());

  std::vector<std::vector<Eigen::Index>> rows(batch.size());
  std::vector<Eigen::Index> next(calls.size(), 0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Trajectory& t = batch[k];
    if (!t.terminal) throw ContractViolation("tb_loss: trajectory is not terminal");
    if (t.actions.size() > calls.size()) throw ContractViolation("trajectory is longer than the recorded rollout");
    double lpf = 0.0;
    for (std::size_t s = 0; s < t.actions.size(); ++s) {
      const Eigen::Index r = next[s]++;
      if (r >= calls[s].log_probs.rows()) throw ContractViolation("batch does not match the recorded rollout");
      rows[k].push_back(r);
      lpf += calls[s].log_probs(r, t.actions[s]);
    }
    const double res = tb_residual(p.log_z, lpf, t, cfg);
    out.log_pf[k] = lpf;
    out.residuals[k] = res;
    out.loss += res * res * inv_k;
    out.grad.log_z += 2.0 * res * inv_k;
  }
  for (std::size_t s = 0; s < calls.size(); ++s) {
    if (next[s] != calls[s].log_probs.rows()) throw ContractViolation("batch does not match the recorded rollout");
  }

  for (std::size_t s = 0; s < calls.size(); ++s) {
    const Matrix& lp = calls[s].log_probs;
    if (lp.rows() == 0) continue;
    Matrix d_logits(lp.rows(), lp.cols());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      if (batch[k].actions.size() <= s) continue;
      const Eigen::Index r = rows[k][s];
      const double g = 2.0 * out.residuals[k] * inv_k;
      d_logits.row(r) = -g * lp.row(r).array().exp();
      d_logits(r, batch[k].actions[s]) += g;
    }
    PolicyNetwork::backward(d_logits, p, enc, calls[s].cache, out.grad);
    calls[s] = {};
  }
  return out;
}

/// FIFO ring of trajectories with uniform resampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

  void push(const Trajectory& t) {
    if (items_.size() < capacity_) {
      items_.push_back(t);
    } else {
      items_[head_] = t;
    }
    head_ = (head_ + 1) % capacity_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }

  /// Uniform draws with replacement.
  std::vector<Trajectory> sample(std::size_t count, Rng& rng) const {
    if (items_.empty()) throw ContractViolation("sampling from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<Trajectory> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(items_[pick(rng)]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Trajectory> items_;
};

struct StepMetrics {
  std::int64_t step = 0;
  /// TB loss of the batch before the update.
  double loss = 0.0;
  double success_fraction = 0.0;
  /// log Z used for the loss (before the update).
  double log_z = 0.0;
  double mean_length = 0.0;
  double grad_norm = 0.0;
};

/// Thrown when a step produces a non-finite loss or gradient; carries the
/// offending batch for the diagnostic dump.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, std::vector<Trajectory> batch)
      : NumericalError(what), batch_(std::move(batch)) {}
  const std::vector<Trajectory>& batch() const { return batch_; }

 private:
  std::vector<Trajectory> batch_;
};

/// Draws K targets with depth ~ Uniform{depth_min..depth_max}.
inline std::vector<UnitaryMatrix> sample_targets(const ActionSpace& space, const TrainConfig& cfg, Rng& rng) {
  std::uniform_int_distribution<int> depth(cfg.depth_min, cfg.depth_max);
  std::vector<UnitaryMatrix> targets;
  targets.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int k = 0; k < cfg.batch_size; ++k) targets.push_back(random_target(depth(rng), space, rng).matrix);
  return targets;
}

/// One training iteration on the given targets: on-policy rollouts,
/// optional replay mixing, TB gradient, global-norm clip, Adam update.
inline StepMetrics train_step_on(std::span<const UnitaryMatrix> targets, PolicyParameters& params,
                                 OptimizerState& opt, const ActionSpace& space, const TrainConfig& cfg, Rng& rng,
                                 ReplayBuffer* replay = nullptr, std::vector<Trajectory>* sampled = nullptr) {
  if (targets.empty()) throw ContractViolation("train step without targets");
  const bool mixing = replay != nullptr && cfg.replay.enabled;
  std::optional<RecordingPolicy> recorder;
  std::vector<Trajectory> fresh;
  if (mixing) {
    fresh = rollout_batch(NetworkPolicy(params, cfg.encoder), space, targets, cfg.reward, rng);
  } else {
    recorder.emplace(params, cfg.encoder);
    fresh = rollout_batch(*recorder, space, targets, cfg.reward, rng);
  }

  StepMetrics m;
  m.step = opt.step;
  m.log_z = params.log_z;
  for (const auto& t : fresh) {
    m.success_fraction += t.success ? 1.0 : 0.0;
    m.mean_length += static_cast<double>(t.length());
  }
  m.success_fraction /= static_cast<double>(fresh.size());
  m.mean_length /= static_cast<double>(fresh.size());

  std::vector<Trajectory> batch = fresh;
  if (mixing) {
    for (const auto& t : fresh) replay->push(t);
    const auto n_replay = static_cast<std::size_t>(std::llround(cfg.replay.resample_fraction * static_cast<double>(batch.size())));
    std::vector<Trajectory> drawn = replay->sample(n_replay, rng);
    for (std::size_t k = 0; k < n_replay; ++k) batch[k] = std::move(drawn[k]);
  }

  LossAndGradient lg = mixing ? tb_loss_and_gradient(batch, params, cfg.encoder, cfg.reward, cfg.loss_chunk)
                              : tb_loss_and_gradient_recorded(batch, params, cfg.encoder, cfg.reward, *recorder);
  m.loss = lg.loss;
  m.grad_norm = global_norm(lg.grad);
  if (!std::isfinite(m.loss) || !std::isfinite(m.grad_norm)) {
    throw TrainingDiverged("non-finite loss or gradient at step " + std::to_string(opt.step) +
                               " (loss=" + std::to_string(m.loss) + ", |g|=" + std::to_string(m.grad_norm) + ")",
                           std::move(batch));
  }
  clip_global_norm(lg.grad, cfg.grad_clip);
  adam_update(params, opt, lg.grad, cfg.learning_rate, cfg.effective_log_z_lr());
  if (sampled != nullptr) *sampled = std::move(fresh);
  return m;
}

/// train_step_on with K fresh targets drawn from the configured depth range.
inline StepMetrics train_step(PolicyParameters& params, OptimizerState& opt, const ActionSpace& space,
                              const TrainConfig& cfg, Rng& rng, ReplayBuffer* replay = nullptr,
                              std::vector<Trajectory>* sampled = nullptr) {
  const std::vector<UnitaryMatrix> targets = sample_targets(space, cfg, rng);
  return train_step_on(targets, params, opt, space, cfg, rng, replay, sampled);
}

inline std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_state_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw ValidationError("invalid RNG state");
  return rng;
}

inline std::string metrics_csv_header() { return "step,loss,success_rate,log_z,mean_length\n"; }

inline std::string metrics_csv_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.10g,%.10g,%.10g,%.10g\n", static_cast<long long>(m.step), m.loss,
                m.success_fraction, m.log_z, m.mean_length);
  return buf;
}

/// Generator seeds derived from the run seed: parameters and rollouts use
/// separate streams.
inline Rng init_rng(std::uint64_t seed) { return Rng(seed); }
inline Rng rollout_rng(std::uint64_t seed) { return Rng(seed ^ 0x9E3779B97F4A7C15ULL); }

struct TrainResult {
  std::string final_checkpoint;
  std::vector<StepMetrics> metrics;
};

/// Runs cfg.n_iters steps (or the remainder after `resume`), writing
///   <out_dir>/metrics.csv    step,loss,success_rate,log_z,mean_length
///   <out_dir>/latest.ckpt    every checkpoint_every steps
///   <out_dir>/final.ckpt     at the end
/// On divergence writes diverged.ckpt and diverged_batch.jsonl, then
/// rethrows.
inline TrainResult train(const TrainConfig& cfg, const std::string& resume = {},
                         const std::function<void(const StepMetrics&)>& on_step = {}) {
  cfg.validate();
  const ActionSpace space(GateSet::parse(cfg.gate_set), cfg.num_qubits, cfg.prune_oversized);
  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);

  Checkpoint ck;
  ck.config = cfg;
  Rng rng = rollout_rng(cfg.seed);
  OptimizerState opt;
  std::vector<std::string> kept_rows;
  if (!resume.empty()) {
    ck = load_checkpoint(resume);
    if (ck.action_space().hash() != space.hash()) throw ConfigError("resume checkpoint is for a different action space");
    if (!(ck.config.encoder == cfg.encoder)) throw ConfigError("resume checkpoint has a different encoder config");
    ck.config = cfg;
    opt = ck.optimizer ? *ck.optimizer : OptimizerState::for_params(ck.params);
    if (!ck.rng_state.empty()) rng = rng_from_state_string(ck.rng_state);
    std::ifstream old(out_dir / "metrics.csv");
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line)) {
      if (!line.empty() && std::stoll(line.substr(0, line.find(','))) < ck.step) kept_rows.push_back(line + "\n");
    }
  } else {
    Rng prng = init_rng(cfg.seed);
    ck.params = init_params(cfg.encoder, space, prng);
    opt = OptimizerState::for_params(ck.params);
  }

  std::ofstream csv(out_dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
  csv << metrics_csv_header();
  for (const auto& r : kept_rows) csv << r;
  std::ofstream dump;
  if (!cfg.trajectory_dump.empty()) dump.open(cfg.trajectory_dump, resume.empty() ? std::ios::trunc : std::ios::app);

  ReplayBuffer replay(cfg.replay.capacity);
  TrainResult result;
  auto snapshot = [&](const fs::path& path) {
    ck.optimizer = opt;
    ck.step = opt.step;
    ck.rng_state = rng_state_string(rng);
    save_checkpoint(ck, path.string());
  };

  while (opt.step < cfg.n_iters) {
    StepMetrics m;
    std::vector<Trajectory> sampled;
    try {
      m = train_step(ck.params, opt, space, cfg, rng, cfg.replay.enabled ? &replay : nullptr,
                     dump.is_open() ? &sampled : nullptr);
    } catch (const TrainingDiverged& e) {
      snapshot(out_dir / "diverged.ckpt");
      std::ofstream bad(out_dir / "diverged_batch.jsonl");
      for (const auto& t : e.batch()) bad << trajectory_to_json(t).dump() << '\n';
      throw;
    }
    csv << metrics_csv_row(m);
    for (const auto& t : sampled) dump << trajectory_to_json(t).dump() << '\n';
    result.metrics.push_back(m);
    if (on_step) on_step(m);
    if (opt.step % cfg.checkpoint_every == 0) {
      csv.flush();
      snapshot(out_dir / "latest.ckpt");
    }
  }
  csv.flush();
  snapshot(out_dir / "final.ckpt");
  result.final_checkpoint = (out_dir / "final.ckpt").string();
  return result;
}

}  // namespace qflownet
