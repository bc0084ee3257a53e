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

// Run configuration and its JSON form. A config file is one JSON object:
//
//   {
//     "gate_set": "G1", "num_qubits": 2, "seed": 7,
//     "reward":  {"success_reward": 100, "epsilon_reward": 1e-4,
//                 "fidelity_threshold": 0.999, "l_max": 6},
//     "encoder": {"d1": 64, "d2": 128, "d_emb": 256, "attn_depth": 4,
//                 "attn_heads": 8, "mlp_hidden": 128, "ffn_expansion": 4},
//     "train":   {"n_iters": 5000, "batch_size": 64, "learning_rate": 1e-4,
//                 "log_z_learning_rate": 1e-2, "depth_min": 1, "depth_max": 4,
//                 "grad_clip": 10, "checkpoint_every": 500,
//                 "replay": {"enabled": false, "capacity": 4096,
//                            "resample_fraction": 0.5}},
//     "out_dir": "runs/desk"
//   }
//
// Missing keys take their defaults; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "json.hpp"
#include "qflownet/errors.hpp"
#include "qflownet/gate_algebra.hpp"
#include "qflownet/policy_net.hpp"
#include "qflownet/synthesis_env.hpp"

namespace qflownet {

struct ReplayConfig {
  bool enabled = false;
  std::size_t capacity = 4096;
  /// Fraction of each loss batch drawn from the buffer instead of the
  /// fresh rollouts.
  double resample_fraction = 0.5;
};

struct TrainConfig {
  std::string gate_set = "G1";
  int num_qubits = 2;
  bool prune_oversized = false;
  std::uint64_t seed = 0;
  RewardConfig reward{100.0, 1e-4, 0.999, 12};
  EncoderConfig encoder;

  int n_iters = 5000;
  int batch_size = 64;
  double learning_rate = 1e-4;
  /// Separate step size for log Z; a negative value means "use
  /// learning_rate".
  double log_z_learning_rate = 1e-2;
  int depth_min = 1;
  int depth_max = 12;
  double grad_clip = 10.0;
  int checkpoint_every = 500;
  ReplayConfig replay;

  std::string out_dir = "run";
  /// When non-empty, every sampled trajectory is appended to this JSONL file.
  std::string trajectory_dump;
  /// Trajectories per forward/backward chunk in the loss pass.
  int loss_chunk = 32;

  double effective_log_z_lr() const {
    return log_z_learning_rate < 0.0 ? learning_rate : log_z_learning_rate;
  }

  void validate() const {
    reward.validate();
    encoder.validate();
    GateSet::parse(gate_set);
    if (num_qubits < 1) throw ConfigError("num_qubits must be >= 1");
    if (n_iters < 1 || batch_size < 1) throw ConfigError("n_iters and batch_size must be >= 1");
    if (depth_min < 1 || depth_max < depth_min || depth_max > reward.l_max) {
      throw ConfigError("depth range must satisfy 1 <= depth_min <= depth_max <= l_max");
    }
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    if (loss_chunk < 1) throw ConfigError("loss_chunk must be >= 1");
    if (replay.enabled && (replay.capacity < 1 || replay.resample_fraction < 0.0 ||
                           replay.resample_fraction > 1.0)) {
      throw ConfigError("replay needs capacity >= 1 and resample_fraction in [0, 1]");
    }
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json to_json(const RewardConfig& r) {
  return {{"success_reward", r.success_reward},
          {"epsilon_reward", r.epsilon_reward},
          {"fidelity_threshold", r.fidelity_threshold},
          {"l_max", r.l_max}};
}

inline RewardConfig reward_config_from_json(const nlohmann::json& j, RewardConfig r = {}) {
  detail::reject_unknown(j, {"success_reward", "epsilon_reward", "fidelity_threshold", "l_max"}, "reward");
  detail::read_opt(j, "success_reward", r.success_reward);
  detail::read_opt(j, "epsilon_reward", r.epsilon_reward);
  detail::read_opt(j, "fidelity_threshold", r.fidelity_threshold);
  detail::read_opt(j, "l_max", r.l_max);
  return r;
}

inline nlohmann::json to_json(const EncoderConfig& e) {
  return {{"d1", e.d1},
          {"d2", e.d2},
          {"d_emb", e.d_emb},
          {"attn_depth", e.attn_depth},
          {"attn_heads", e.attn_heads},
          {"mlp_hidden", e.mlp_hidden},
          {"ffn_expansion", e.ffn_expansion}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j, EncoderConfig e = {}) {
  detail::reject_unknown(j, {"d1", "d2", "d_emb", "attn_depth", "attn_heads", "mlp_hidden", "ffn_expansion"},
                         "encoder");
  detail::read_opt(j, "d1", e.d1);
  detail::read_opt(j, "d2", e.d2);
  detail::read_opt(j, "d_emb", e.d_emb);
  detail::read_opt(j, "attn_depth", e.attn_depth);
  detail::read_opt(j, "attn_heads", e.attn_heads);
  detail::read_opt(j, "mlp_hidden", e.mlp_hidden);
  detail::read_opt(j, "ffn_expansion", e.ffn_expansion);
  return e;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"gate_set", c.gate_set},
          {"num_qubits", c.num_qubits},
          {"prune_oversized", c.prune_oversized},
          {"seed", c.seed},
          {"reward", to_json(c.reward)},
          {"encoder", to_json(c.encoder)},
          {"train",
           {{"n_iters", c.n_iters},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"log_z_learning_rate", c.log_z_learning_rate},
            {"depth_min", c.depth_min},
            {"depth_max", c.depth_max},
            {"grad_clip", c.grad_clip},
            {"checkpoint_every", c.checkpoint_every},
            {"loss_chunk", c.loss_chunk},
            {"replay",
             {{"enabled", c.replay.enabled},
              {"capacity", c.replay.capacity},
              {"resample_fraction", c.replay.resample_fraction}}}}},
          {"out_dir", c.out_dir},
          {"trajectory_dump", c.trajectory_dump}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    detail::reject_unknown(j, {"gate_set", "num_qubits", "prune_oversized", "seed", "reward", "encoder", "train",
                               "out_dir", "trajectory_dump"},
                           "config");
    detail::read_opt(j, "gate_set", c.gate_set);
    detail::read_opt(j, "num_qubits", c.num_qubits);
    detail::read_opt(j, "prune_oversized", c.prune_oversized);
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "out_dir", c.out_dir);
    detail::read_opt(j, "trajectory_dump", c.trajectory_dump);
    if (j.contains("reward")) c.reward = reward_config_from_json(j.at("reward"), c.reward);
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"), c.encoder);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::reject_unknown(t, {"n_iters", "batch_size", "learning_rate", "log_z_learning_rate", "depth_min",
                                 "depth_max", "grad_clip", "checkpoint_every", "loss_chunk", "replay"},
                             "train");
      detail::read_opt(t, "n_iters", c.n_iters);
      detail::read_opt(t, "batch_size", c.batch_size);
      detail::read_opt(t, "learning_rate", c.learning_rate);
      detail::read_opt(t, "log_z_learning_rate", c.log_z_learning_rate);
      detail::read_opt(t, "depth_min", c.depth_min);
      detail::read_opt(t, "depth_max", c.depth_max);
      detail::read_opt(t, "grad_clip", c.grad_clip);
      detail::read_opt(t, "checkpoint_every", c.checkpoint_every);
      detail::read_opt(t, "loss_chunk", c.loss_chunk);
      if (t.contains("replay")) {
        const auto& r = t.at("replay");
        detail::reject_unknown(r, {"enabled", "capacity", "resample_fraction"}, "replay");
        detail::read_opt(r, "enabled", c.replay.enabled);
        detail::read_opt(r, "capacity", c.replay.capacity);
        detail::read_opt(r, "resample_fraction", c.replay.resample_fraction);
      }
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

}  // namespace qflownet
