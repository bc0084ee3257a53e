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

// Test-set construction and sampled evaluation of a policy.
//
// Attempts convention: for each target, rollouts are numbered 1..k_max and
// "attempts" is the index of the first successful rollout, or k_max + 1 if
// none succeeds. Mean attempts are averaged over successful targets only;
// failures are counted separately. Diversity counts distinct successful
// action sequences (sequence identity, no commutation reasoning).

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "qflownet/canonical_key.hpp"
#include "qflownet/checkpoint.hpp"
#include "qflownet/gate_algebra.hpp"
#include "qflownet/oracle.hpp"
#include "qflownet/serialization.hpp"
#include "qflownet/synthesis_env.hpp"

namespace qflownet {

inline constexpr const char* kProvenanceOracle = "oracle";
inline constexpr const char* kProvenanceGeneration = "generation-depth";

struct TestCase {
  Circuit circuit;
  UnitaryMatrix target;
  int generation_depth = 0;
  int reference_length = 0;
  std::string provenance;
};

struct TestSet {
  std::string gate_set;
  int num_qubits = 1;
  std::vector<TestCase> cases;
};

struct TestSetOptions {
  int min_length = 1;
  int max_length = 6;
  int per_length = 25;
  /// Oracle search cap; references fall back to generation depth when the
  /// oracle cannot confirm a length within min(cap, depth).
  int oracle_cap = 6;
  OracleOptions oracle;
  /// Draws allowed per requested target before a bucket is left short.
  int max_draws_per_target = 1000;
};

/// For each length L, draws random circuits of depth L until `per_length`
/// targets with distinct canonical keys are collected (duplicates within a
/// bucket are redrawn) and computes a reference length with the BFS oracle.
inline TestSet build_test_set(const ActionSpace& space, const TestSetOptions& opt, Rng& rng) {
  TestSet ts{space.gate_set().name(), space.num_qubits(), {}};
  for (int length = opt.min_length; length <= opt.max_length; ++length) {
    std::set<CanonicalKey> bucket;
    int draws = 0;
    while (static_cast<int>(bucket.size()) < opt.per_length &&
           draws < opt.max_draws_per_target * std::max(1, opt.per_length)) {
      ++draws;
      RandomCircuit rc = random_target(length, space, rng);
      if (!bucket.insert(canonical_key(rc.matrix, opt.oracle.key_tolerance, opt.oracle.key_decimals)).second) {
        continue;
      }
      TestCase tc{Circuit{space.num_qubits(), rc.circuit}, rc.matrix, length, length, kProvenanceGeneration};
      const int cap = std::min(opt.oracle_cap, length);
      try {
        const OracleResult r = bfs_min_length(rc.matrix, space, cap, opt.oracle);
        if (r.min_length) {
          tc.reference_length = *r.min_length;
          tc.provenance = kProvenanceOracle;
        }
      } catch (const BudgetExceeded&) {
      }
      ts.cases.push_back(std::move(tc));
    }
  }
  return ts;
}

inline nlohmann::json to_json(const TestCase& tc, const std::string& gate_set) {
  return {{"circuit", circuit_to_json(tc.circuit)},
          {"reference_length", tc.reference_length},
          {"generation_depth", tc.generation_depth},
          {"provenance", tc.provenance},
          {"gate_set", gate_set}};
}

inline void write_test_set(const TestSet& ts, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write test set '" + path + "'");
  for (const auto& tc : ts.cases) out << to_json(tc, ts.gate_set).dump() << '\n';
}

inline TestSet read_test_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open test set '" + path + "'");
  TestSet ts;
  bool first = true;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TestCase tc{circuit_from_json(j.at("circuit")), UnitaryMatrix::identity(1), 0, 0, ""};
      tc.target = tc.circuit.matrix();
      tc.reference_length = j.at("reference_length").get<int>();
      tc.generation_depth = j.value("generation_depth", static_cast<int>(tc.circuit.gates.size()));
      tc.provenance = j.at("provenance").get<std::string>();
      const std::string gs = j.value("gate_set", std::string());
      if (first) {
        ts.gate_set = gs;
        ts.num_qubits = tc.circuit.num_qubits;
        first = false;
      } else if (gs != ts.gate_set || tc.circuit.num_qubits != ts.num_qubits) {
        throw ValidationError("test set mixes gate sets or qubit counts");
      }
      ts.cases.push_back(std::move(tc));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed test-set line in '" + path + "': " + e.what());
    }
  }
  return ts;
}

struct TargetRecord {
  int reference_length = 0;
  int generation_depth = 0;
  std::string provenance;
  bool success = false;
  /// 1-based index of the first success, k_max + 1 if none.
  int attempts = 0;
  /// Shortest successful length, -1 if none.
  int shortest_length = -1;
  std::set<std::vector<int>> distinct_solutions;
};

struct EvalReport {
  int k_max = 0;
  std::vector<TargetRecord> records;

  double overall_success_rate() const {
    if (records.empty()) return 0.0;
    std::size_t s = 0;
    for (const auto& r : records) s += r.success ? 1 : 0;
    return static_cast<double>(s) / static_cast<double>(records.size());
  }

  /// Mean attempts over successful targets (NaN-free: 0 when none).
  double mean_attempts() const {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
      if (r.success) {
        total += r.attempts;
        ++n;
      }
    }
    return n ? total / static_cast<double>(n) : 0.0;
  }
};

struct LengthRow {
  int reference_length = 0;
  std::size_t targets = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double mean_attempts = 0.0;  // over successes
};

inline std::vector<LengthRow> per_length_metrics(const EvalReport& er) {
  std::map<int, LengthRow> rows;
  std::map<int, double> attempt_sums;
  for (const auto& r : er.records) {
    LengthRow& row = rows[r.reference_length];
    row.reference_length = r.reference_length;
    ++row.targets;
    if (r.success) {
      ++row.successes;
      attempt_sums[r.reference_length] += r.attempts;
    }
  }
  std::vector<LengthRow> out;
  for (auto& [len, row] : rows) {
    row.success_rate = static_cast<double>(row.successes) / static_cast<double>(row.targets);
    row.mean_attempts = row.successes ? attempt_sums[len] / static_cast<double>(row.successes) : 0.0;
    out.push_back(row);
  }
  return out;
}

/// Draws up to k_max rollouts per target. Attempts stop counting at the
/// first success but sampling continues to k_max to collect distinct
/// successful sequences.
template <ForwardPolicy Policy>
EvalReport evaluate_policy(const Policy& policy, const ActionSpace& space, const TestSet& ts, int k_max,
                           const RewardConfig& cfg, Rng& rng) {
  if (k_max < 1) throw ConfigError("k_max must be >= 1");
  if (ts.num_qubits != space.num_qubits() || (!ts.gate_set.empty() && ts.gate_set != space.gate_set().name())) {
    throw ValidationError("test set (" + ts.gate_set + ", n=" + std::to_string(ts.num_qubits) +
                          ") does not match the policy (" + space.gate_set().name() + ", n=" +
                          std::to_string(space.num_qubits()) + ")");
  }
  EvalReport er;
  er.k_max = k_max;
  for (const auto& tc : ts.cases) {
    TargetRecord rec;
    rec.reference_length = tc.reference_length;
    rec.generation_depth = tc.generation_depth;
    rec.provenance = tc.provenance;
    rec.attempts = k_max + 1;
    const std::vector<UnitaryMatrix> copies(static_cast<std::size_t>(k_max), tc.target);
    const std::vector<Trajectory> trajs = rollout_batch(policy, space, copies, cfg, rng);
    for (std::size_t k = 0; k < trajs.size(); ++k) {
      const auto& t = trajs[k];
      if (!t.success) continue;
      if (!rec.success) {
        rec.success = true;
        rec.attempts = static_cast<int>(k) + 1;
      }
      const int len = static_cast<int>(t.length());
      if (rec.shortest_length < 0 || len < rec.shortest_length) rec.shortest_length = len;
      rec.distinct_solutions.insert(t.actions);
    }
    er.records.push_back(std::move(rec));
  }
  return er;
}

inline EvalReport evaluate(const Checkpoint& ck, const TestSet& ts, int k_max, Rng& rng) {
  const ActionSpace space = ck.action_space();
  return evaluate_policy(NetworkPolicy(ck.params, ck.config.encoder), space, ts, k_max, ck.config.reward, rng);
}

struct LengthConfusion {
  /// counts(ref, synth) over successful targets; rows = reference length,
  /// columns = shortest synthesized length.
  Eigen::MatrixXd counts;
  /// Row-normalized counts; rows with no successes stay zero.
  Eigen::MatrixXd normalized;
  std::size_t successes = 0;
  std::size_t shorter_than_reference = 0;
  double shorter_fraction() const {
    return successes ? static_cast<double>(shorter_than_reference) / static_cast<double>(successes) : 0.0;
  }
};

/// Optional provenance filter restricts the matrix to references of one kind.
inline LengthConfusion length_confusion(const EvalReport& er, const std::optional<std::string>& provenance = {}) {
  int max_ref = 0;
  int max_len = 0;
  for (const auto& r : er.records) {
    max_ref = std::max(max_ref, r.reference_length);
    max_len = std::max(max_len, r.shortest_length);
  }
  LengthConfusion c;
  c.counts = Eigen::MatrixXd::Zero(max_ref + 1, std::max(max_len, max_ref) + 1);
  for (const auto& r : er.records) {
    if (!r.success) continue;
    if (provenance && r.provenance != *provenance) continue;
    c.counts(r.reference_length, r.shortest_length) += 1.0;
    ++c.successes;
    if (r.shortest_length < r.reference_length) ++c.shorter_than_reference;
  }
  c.normalized = c.counts;
  for (Eigen::Index row = 0; row < c.counts.rows(); ++row) {
    const double s = c.counts.row(row).sum();
    if (s > 0.0) c.normalized.row(row) /= s;
  }
  return c;
}

struct DiversityHistogram {
  std::vector<std::size_t> per_target;
  /// Bins [lo, hi] inclusive: [0,0], [1,1], [2,3], [4,7], ... up to k_max.
  std::vector<std::pair<int, int>> bins;
  std::vector<std::size_t> counts;
};

inline DiversityHistogram diversity_histogram(const EvalReport& er) {
  DiversityHistogram h;
  h.bins.push_back({0, 0});
  for (int lo = 1; lo <= std::max(1, er.k_max); lo *= 2) h.bins.push_back({lo, std::min(2 * lo - 1, std::max(1, er.k_max))});
  h.counts.assign(h.bins.size(), 0);
  for (const auto& r : er.records) {
    const std::size_t n = r.distinct_solutions.size();
    h.per_target.push_back(n);
    for (std::size_t b = 0; b < h.bins.size(); ++b) {
      if (static_cast<int>(n) >= h.bins[b].first && static_cast<int>(n) <= h.bins[b].second) {
        ++h.counts[b];
        break;
      }
    }
  }
  return h;
}

}  // namespace qflownet
