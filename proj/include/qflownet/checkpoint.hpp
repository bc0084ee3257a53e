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

// Checkpoint container:
//
//   8 bytes   magic "QFNCKPT1"
//   8 bytes   header length L (uint64, little-endian)
//   L bytes   JSON header
//   payload   float64 values (little-endian), concatenated
//
// The header lists every tensor as {"name", "shape": [rows, cols],
// "offset"} (offset in doubles into the payload, row-major values) and
// carries the run config, encoder config, gate set, qubit count,
// action-space hash (hex), seed, log_z, training step and RNG state.
// Optimizer moments are stored as tensors prefixed "adam.m." / "adam.v.".

#pragma once

#include <bit>
#include <iterator>
#include <map>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qflownet/adam.hpp"
#include "qflownet/config.hpp"
#include "qflownet/errors.hpp"
#include "qflownet/gate_algebra.hpp"
#include "qflownet/policy_net.hpp"

namespace qflownet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Checkpoint {
  TrainConfig config;
  PolicyParameters params;
  std::optional<OptimizerState> optimizer;
  std::int64_t step = 0;
  /// Textual std::mt19937_64 state, empty if not recorded.
  std::string rng_state;

  ActionSpace action_space() const {
    return ActionSpace(GateSet::parse(config.gate_set), config.num_qubits, config.prune_oversized);
  }
};

namespace detail {

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

inline void add_tensors(const std::string& prefix, const PolicyParameters& p, nlohmann::json& table,
                        std::vector<double>& payload) {
  p.for_each_tensor([&](const std::string& name, const auto& t) {
    table.push_back({{"name", prefix + name},
                     {"shape", {t.rows(), t.cols()}},
                     {"offset", payload.size()}});
    // Row vectors and row-major matrices are already stored row-major.
    payload.insert(payload.end(), t.data(), t.data() + t.size());
  });
}

inline void read_tensors(const std::string& prefix, PolicyParameters& p, const nlohmann::json& table,
                         const std::vector<double>& payload) {
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : table) by_name[e.at("name").get<std::string>()] = &e;
  p.for_each_tensor([&](const std::string& name, auto& t) {
    auto it = by_name.find(prefix + name);
    if (it == by_name.end()) throw ValidationError("checkpoint is missing tensor '" + prefix + name + "'");
    const auto& e = *it->second;
    const auto rows = e.at("shape").at(0).get<Eigen::Index>();
    const auto cols = e.at("shape").at(1).get<Eigen::Index>();
    const auto offset = e.at("offset").get<std::size_t>();
    if (rows != t.rows() || cols != t.cols()) {
      throw ValidationError("tensor '" + prefix + name + "' has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", expected " + std::to_string(t.rows()) + "x" +
                            std::to_string(t.cols()));
    }
    if (offset + static_cast<std::size_t>(t.size()) > payload.size()) {
      throw ValidationError("tensor '" + prefix + name + "' runs past the payload");
    }
    std::memcpy(t.data(), payload.data() + offset, static_cast<std::size_t>(t.size()) * sizeof(double));
  });
}

}  // namespace detail

/// Writes to `path` via a temporary file and rename, so an interrupted
/// write never replaces a valid checkpoint with a partial one.
inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const ActionSpace space = ck.action_space();
  nlohmann::json header;
  header["format"] = 1;
  header["config"] = to_json(ck.config);
  header["encoder"] = to_json(ck.config.encoder);
  header["gate_set"] = space.gate_set().name();
  header["gate_set_members"] = space.gate_set().members();
  header["num_qubits"] = ck.config.num_qubits;
  header["num_actions"] = space.size();
  header["action_space_hash"] = detail::hex64(space.hash());
  header["seed"] = ck.config.seed;
  header["log_z"] = ck.params.log_z;
  header["step"] = ck.step;
  header["rng_state"] = ck.rng_state;

  nlohmann::json table = nlohmann::json::array();
  std::vector<double> payload;
  detail::add_tensors("", ck.params, table, payload);
  if (ck.optimizer) {
    detail::add_tensors("adam.m.", ck.optimizer->first_moment, table, payload);
    detail::add_tensors("adam.v.", ck.optimizer->second_moment, table, payload);
    header["adam"] = {{"step", ck.optimizer->step},
                      {"beta1", ck.optimizer->beta1},
                      {"beta2", ck.optimizer->beta2},
                      {"epsilon", ck.optimizer->epsilon},
                      {"m_log_z", ck.optimizer->first_moment.log_z},
                      {"v_log_z", ck.optimizer->second_moment.log_z}};
  }
  header["tensors"] = std::move(table);

  const std::string text = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp + "'");
    out.write("QFNCKPT1", 8);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

/// Loads and verifies a checkpoint; the stored action-space hash must match
/// the action space rebuilt from the stored gate set and qubit count.
inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "QFNCKPT1", 8) != 0) {
    throw ValidationError("'" + path + "' is not a checkpoint file");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError("truncated checkpoint header in '" + path + "'");
  std::vector<double> payload;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(double) != 0) throw ValidationError("checkpoint payload is misaligned");
    payload.resize(rest.size() / sizeof(double));
    std::memcpy(payload.data(), rest.data(), rest.size());
  }

  try {
    const nlohmann::json header = nlohmann::json::parse(text);
    Checkpoint ck;
    ck.config = train_config_from_json(header.at("config"));
    const ActionSpace space = ck.action_space();
    if (header.at("action_space_hash").get<std::string>() != detail::hex64(space.hash())) {
      throw ConfigError("checkpoint action-space hash does not match " + space.gate_set().name() + " on " +
                        std::to_string(ck.config.num_qubits) + " qubit(s)");
    }
    Rng shape_rng(0);
    ck.params = init_params(ck.config.encoder, space.size(), shape_rng);
    detail::read_tensors("", ck.params, header.at("tensors"), payload);
    ck.params.log_z = header.at("log_z").get<double>();
    ck.step = header.at("step").get<std::int64_t>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    if (header.contains("adam")) {
      const auto& a = header.at("adam");
      OptimizerState opt = OptimizerState::for_params(ck.params);
      detail::read_tensors("adam.m.", opt.first_moment, header.at("tensors"), payload);
      detail::read_tensors("adam.v.", opt.second_moment, header.at("tensors"), payload);
      opt.step = a.at("step").get<std::int64_t>();
      opt.beta1 = a.at("beta1").get<double>();
      opt.beta2 = a.at("beta2").get<double>();
      opt.epsilon = a.at("epsilon").get<double>();
      opt.first_moment.log_z = a.at("m_log_z").get<double>();
      opt.second_moment.log_z = a.at("v_log_z").get<double>();
      ck.optimizer = std::move(opt);
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint header in '" + path + "': " + e.what());
  }
}

}  // namespace qflownet
