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

// Exhaustive exact-synthesis ground truth over a discrete action space.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "qflownet/canonical_key.hpp"
#include "qflownet/errors.hpp"
#include "qflownet/gate_algebra.hpp"

namespace qflownet {

struct OracleOptions {
  /// Refuse to search when |A|^l_cap exceeds this many nodes.
  double node_budget = 5e7;
  double fidelity_threshold = 0.999;
  /// Merge phase-equivalent partial products by canonical key.
  bool prune_visited = true;
  double key_tolerance = 1e-6;
  int key_decimals = 6;
};

struct OracleResult {
  /// Empty when no circuit of length <= l_cap matches.
  std::optional<int> min_length;
  std::vector<int> witness;
  /// Distinct action sequences of minimal length that match.
  std::uint64_t count_at_min = 0;
};

inline void check_node_budget(std::size_t num_actions, int l_cap, double budget) {
  if (l_cap < 0) throw ConfigError("l_cap must be >= 0");
  const double nodes = std::pow(static_cast<double>(num_actions), l_cap);
  if (nodes > budget) {
    throw BudgetExceeded("search over " + std::to_string(num_actions) + "^" + std::to_string(l_cap) +
                         " nodes exceeds the node budget of " + std::to_string(budget));
  }
}

/// Breadth-first search by circuit length. Each layer holds the distinct
/// partial products first reached at that length, along with the number of
/// action sequences of that length reaching them. The first layer
/// containing a product with fidelity above the threshold gives the minimal
/// length; its witness is the first such node in expansion order.
inline OracleResult bfs_min_length(const UnitaryMatrix& target, const ActionSpace& space, int l_cap,
                                   const OracleOptions& opt = {}) {
  check_node_budget(space.size(), l_cap, opt.node_budget);
  if (target.num_qubits() != space.num_qubits()) throw ValidationError("target and action space differ in qubit count");

  struct Node {
    UnitaryMatrix product;
    std::int64_t parent;
    int action;
    std::uint64_t count;
  };
  std::vector<Node> nodes;
  nodes.push_back({UnitaryMatrix::identity(space.num_qubits()), -1, -1, 1});

  auto witness_of = [&](std::size_t idx) {
    std::vector<int> seq;
    for (std::int64_t k = static_cast<std::int64_t>(idx); nodes[static_cast<std::size_t>(k)].parent >= 0;
         k = nodes[static_cast<std::size_t>(k)].parent) {
      seq.push_back(nodes[static_cast<std::size_t>(k)].action);
    }
    return std::vector<int>(seq.rbegin(), seq.rend());
  };

  auto check_layer = [&](std::size_t begin, std::size_t end, int length) -> std::optional<OracleResult> {
    OracleResult r;
    for (std::size_t k = begin; k < end; ++k) {
      if (fidelity(target, nodes[k].product) > opt.fidelity_threshold) {
        if (!r.min_length) {
          r.min_length = length;
          r.witness = witness_of(k);
        }
        r.count_at_min += nodes[k].count;
      }
    }
    if (r.min_length) return r;
    return std::nullopt;
  };

  if (auto r = check_layer(0, 1, 0)) return *r;

  std::unordered_map<CanonicalKey, std::size_t, CanonicalKeyHash> seen;
  if (opt.prune_visited) seen.emplace(canonical_key(nodes[0].product, opt.key_tolerance, opt.key_decimals), 0);

  std::size_t layer_begin = 0;
  std::size_t layer_end = 1;
  for (int length = 1; length <= l_cap; ++length) {
    for (std::size_t k = layer_begin; k < layer_end; ++k) {
      for (std::size_t a = 0; a < space.size(); ++a) {
        UnitaryMatrix child = space.matrix(a) * nodes[k].product;
        const std::uint64_t parent_count = nodes[k].count;
        if (opt.prune_visited) {
          CanonicalKey key = canonical_key(child, opt.key_tolerance, opt.key_decimals);
          auto it = seen.find(key);
          if (it != seen.end()) {
            // Another shortest path into a node of the current layer.
            if (it->second >= layer_end) nodes[it->second].count += parent_count;
            continue;
          }
          seen.emplace(std::move(key), nodes.size());
        }
        nodes.push_back({std::move(child), static_cast<std::int64_t>(k), static_cast<int>(a), parent_count});
      }
    }
    layer_begin = layer_end;
    layer_end = nodes.size();
    if (auto r = check_layer(layer_begin, layer_end, length)) return *r;
  }
  return {};
}

/// Every action sequence of length <= l_cap whose product has fidelity
/// above the threshold with the target, ordered by length then
/// lexicographically by action index, truncated to `limit` entries.
inline std::vector<std::vector<int>> enumerate_solutions(const UnitaryMatrix& target, const ActionSpace& space,
                                                         int l_cap, std::size_t limit,
                                                         const OracleOptions& opt = {}) {
  check_node_budget(space.size(), l_cap, opt.node_budget);
  if (target.num_qubits() != space.num_qubits()) throw ValidationError("target and action space differ in qubit count");
  std::vector<std::vector<int>> out;
  std::vector<int> seq;
  std::vector<UnitaryMatrix> products{UnitaryMatrix::identity(space.num_qubits())};

  // Depth-first over sequences of exactly `length` actions.
  auto visit = [&](auto&& self, int length) -> void {
    if (out.size() >= limit) return;
    if (static_cast<int>(seq.size()) == length) {
      if (fidelity(target, products.back()) > opt.fidelity_threshold) out.push_back(seq);
      return;
    }
    for (std::size_t a = 0; a < space.size() && out.size() < limit; ++a) {
      seq.push_back(static_cast<int>(a));
      products.push_back(space.matrix(a) * products.back());
      self(self, length);
      products.pop_back();
      seq.pop_back();
    }
  };
  for (int length = 0; length <= l_cap && out.size() < limit; ++length) visit(visit, length);
  return out;
}

}  // namespace qflownet
