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

// Exact complex linear algebra for discrete gate sets.
//
// Basis convention: qubit 0 is the leftmost (most significant) tensor factor,
// so basis state |q0 q1 ... q_{n-1}> has index sum_k q_k * 2^(n-1-k).
// A circuit [g_1, ..., g_L] has matrix g_L * ... * g_1 (later gates act on
// the left).

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qflownet/errors.hpp"

namespace qflownet {

using Complex = std::complex<double>;
using Rng = std::mt19937_64;

inline constexpr double kUnitarityTolerance = 1e-9;
inline constexpr double kIdentityTolerance = 1e-12;

/// Dense 2^n x 2^n complex unitary. Construction from raw entries validates
/// shape and unitarity; products and daggers of valid unitaries skip the
/// O(d^3) recheck.
class UnitaryMatrix {
 public:
  UnitaryMatrix(int num_qubits, Eigen::MatrixXcd entries,
                double tolerance = kUnitarityTolerance)
      : num_qubits_(num_qubits), entries_(std::move(entries)) {
    if (num_qubits_ < 1 || num_qubits_ > 16) {
      throw ValidationError("qubit count must be in [1, 16], got " +
                            std::to_string(num_qubits_));
    }
    const Eigen::Index d = Eigen::Index{1} << num_qubits_;
    if (entries_.rows() != d || entries_.cols() != d) {
      throw ValidationError("matrix is " + std::to_string(entries_.rows()) +
                            "x" + std::to_string(entries_.cols()) +
                            ", expected " + std::to_string(d) + "x" +
                            std::to_string(d));
    }
    if (unitarity_error() >= tolerance) {
      throw ValidationError("matrix is not unitary (max |MM^dag - I| = " +
                            std::to_string(unitarity_error()) + ")");
    }
  }

  static UnitaryMatrix identity(int num_qubits) {
    const Eigen::Index d = Eigen::Index{1} << num_qubits;
    return UnitaryMatrix(num_qubits, Eigen::MatrixXcd::Identity(d, d));
  }

  int num_qubits() const { return num_qubits_; }
  Eigen::Index dim() const { return entries_.rows(); }
  const Eigen::MatrixXcd& matrix() const { return entries_; }
  Complex operator()(Eigen::Index r, Eigen::Index c) const {
    return entries_(r, c);
  }

  UnitaryMatrix dagger() const {
    return UnitaryMatrix(Trusted{}, num_qubits_, entries_.adjoint());
  }

  UnitaryMatrix operator*(const UnitaryMatrix& rhs) const {
    if (rhs.num_qubits_ != num_qubits_) {
      throw ValidationError("cannot multiply unitaries on " +
                            std::to_string(num_qubits_) + " and " +
                            std::to_string(rhs.num_qubits_) + " qubits");
    }
    return UnitaryMatrix(Trusted{}, num_qubits_, entries_ * rhs.entries_);
  }

  /// Global phase multiple e^{i phi} U.
  UnitaryMatrix with_phase(double phi) const {
    return UnitaryMatrix(Trusted{}, num_qubits_,
                         entries_ * std::polar(1.0, phi));
  }

  /// max-norm of (M M^dag - I).
  double unitarity_error() const {
    const Eigen::MatrixXcd defect =
        entries_ * entries_.adjoint() -
        Eigen::MatrixXcd::Identity(entries_.rows(), entries_.cols());
    return defect.cwiseAbs().maxCoeff();
  }

  Complex trace() const { return entries_.trace(); }

 private:
  struct Trusted {};
  UnitaryMatrix(Trusted, int num_qubits, Eigen::MatrixXcd entries)
      : num_qubits_(num_qubits), entries_(std::move(entries)) {}

  int num_qubits_;
  Eigen::MatrixXcd entries_;
};

inline UnitaryMatrix dagger(const UnitaryMatrix& u) { return u.dagger(); }

/// max-norm distance between two matrices of equal shape.
inline double max_norm_distance(const UnitaryMatrix& a,
                                const UnitaryMatrix& b) {
  if (a.dim() != b.dim()) throw ValidationError("dimension mismatch");
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

/// F(U, V) = |tr(U^dag V)| / d.
inline double fidelity(const UnitaryMatrix& u, const UnitaryMatrix& v) {
  if (u.dim() != v.dim()) {
    throw ValidationError("fidelity: dimension mismatch (" +
                          std::to_string(u.dim()) + " vs " +
                          std::to_string(v.dim()) + ")");
  }
  const Complex overlap = (u.matrix().conjugate().cwiseProduct(v.matrix())).sum();
  return std::abs(overlap) / static_cast<double>(u.dim());
}

// ---------------------------------------------------------------------------
// Base gates

/// Canonical gate names. S-dagger and T-dagger are spelled "Sdg" / "Tdg";
/// "S†" and "T†" are accepted as aliases wherever a name is parsed.
inline std::string canonical_gate_name(std::string_view name) {
  if (name == "S†" || name == "SDG" || name == "sdg") return "Sdg";
  if (name == "T†" || name == "TDG" || name == "tdg") return "Tdg";
  if (name == "CX" || name == "cx") return "CNOT";
  if (name == "CCX" || name == "ccx" || name == "Toffoli") return "CCNOT";
  return std::string(name);
}

inline int gate_arity(std::string_view raw_name) {
  const std::string name = canonical_gate_name(raw_name);
  if (name == "H" || name == "X" || name == "Z" || name == "S" ||
      name == "Sdg" || name == "T" || name == "Tdg") {
    return 1;
  }
  if (name == "CNOT" || name == "SWAP") return 2;
  if (name == "CCNOT") return 3;
  throw ConfigError("unknown gate '" + std::string(raw_name) + "'");
}

/// Standard textbook matrix of a base gate (2x2, 4x4 or 8x8). For
/// multi-qubit gates the first listed qubit is the most significant local
/// factor: CNOT = |0><0| (x) I + |1><1| (x) X with control first, CCNOT
/// controls first and target last.
inline UnitaryMatrix base_matrix(std::string_view raw_name) {
  const std::string name = canonical_gate_name(raw_name);
  const double r = 1.0 / std::sqrt(2.0);
  const Complex i(0.0, 1.0);
  Eigen::MatrixXcd m;
  int qubits = 1;
  if (name == "H") {
    m.resize(2, 2);
    m << r, r, r, -r;
  } else if (name == "X") {
    m.resize(2, 2);
    m << 0, 1, 1, 0;
  } else if (name == "Z") {
    m.resize(2, 2);
    m << 1, 0, 0, -1;
  } else if (name == "S" || name == "Sdg") {
    m.resize(2, 2);
    m << 1, 0, 0, (name == "S" ? i : -i);
  } else if (name == "T" || name == "Tdg") {
    m.resize(2, 2);
    m << 1, 0, 0, std::polar(1.0, (name == "T" ? 1.0 : -1.0) * M_PI / 4.0);
  } else if (name == "CNOT") {
    qubits = 2;
    m = Eigen::MatrixXcd::Identity(4, 4);
    m(2, 2) = m(3, 3) = 0;
    m(2, 3) = m(3, 2) = 1;
  } else if (name == "SWAP") {
    qubits = 2;
    m = Eigen::MatrixXcd::Identity(4, 4);
    m(1, 1) = m(2, 2) = 0;
    m(1, 2) = m(2, 1) = 1;
  } else if (name == "CCNOT") {
    qubits = 3;
    m = Eigen::MatrixXcd::Identity(8, 8);
    m(6, 6) = m(7, 7) = 0;
    m(6, 7) = m(7, 6) = 1;
  } else {
    throw ConfigError("unknown gate '" + std::string(raw_name) + "'");
  }
  return UnitaryMatrix(qubits, std::move(m));
}

// ---------------------------------------------------------------------------
// Gate instances and sets

/// A base gate bound to ordered qubit indices. SWAP qubits and the two CCNOT
/// controls are stored ascending; CCNOT is stored as [c0, c1, target].
struct GateInstance {
  std::string gate;
  std::vector<int> qubits;

  friend bool operator==(const GateInstance&, const GateInstance&) = default;

  std::string to_string() const {
    std::ostringstream os;
    os << gate << '(';
    for (std::size_t k = 0; k < qubits.size(); ++k) {
      os << (k ? "," : "") << qubits[k];
    }
    os << ')';
    return os.str();
  }
};

/// Canonicalizes the gate name and symmetric qubit order; throws on an
/// arity mismatch, repeated qubits or an out-of-range index.
inline GateInstance make_gate(std::string_view name, std::vector<int> qubits,
                              int num_qubits) {
  GateInstance g{canonical_gate_name(name), std::move(qubits)};
  const int arity = gate_arity(g.gate);
  if (static_cast<int>(g.qubits.size()) != arity) {
    throw ValidationError(g.gate + " expects " + std::to_string(arity) +
                          " qubit(s), got " + std::to_string(g.qubits.size()));
  }
  for (std::size_t a = 0; a < g.qubits.size(); ++a) {
    if (g.qubits[a] < 0 || g.qubits[a] >= num_qubits) {
      throw ValidationError("qubit index " + std::to_string(g.qubits[a]) +
                            " out of range for " + std::to_string(num_qubits) +
                            " qubit(s)");
    }
    for (std::size_t b = 0; b < a; ++b) {
      if (g.qubits[a] == g.qubits[b]) {
        throw ValidationError("repeated qubit in " + g.to_string());
      }
    }
  }
  if (g.gate == "SWAP") {
    std::sort(g.qubits.begin(), g.qubits.end());
  } else if (g.gate == "CCNOT" && g.qubits[0] > g.qubits[1]) {
    std::swap(g.qubits[0], g.qubits[1]);
  }
  return g;
}

class GateSet {
 public:
  GateSet(std::string name, std::vector<std::string> members)
      : name_(std::move(name)) {
    if (members.empty()) throw ConfigError("gate set '" + name_ + "' is empty");
    for (const auto& m : members) {
      std::string c = canonical_gate_name(m);
      gate_arity(c);  // throws for unknown gates
      if (std::find(members_.begin(), members_.end(), c) != members_.end()) {
        throw ConfigError("gate set '" + name_ + "' lists " + c + " twice");
      }
      members_.push_back(std::move(c));
    }
  }

  static GateSet g1() {
    return GateSet("G1", {"H", "Z", "S", "Sdg", "T", "Tdg", "CNOT"});
  }
  static GateSet g2() {
    return GateSet("G2", {"H", "X", "Z", "CNOT", "CCNOT", "SWAP"});
  }

  /// "G1", "G2", or "custom:H,Z,..." for a user-declared set of known gates.
  static GateSet parse(std::string_view spec) {
    if (spec == "G1" || spec == "g1") return g1();
    if (spec == "G2" || spec == "g2") return g2();
    constexpr std::string_view prefix = "custom:";
    if (spec.substr(0, prefix.size()) == prefix) {
      std::vector<std::string> members;
      std::string rest(spec.substr(prefix.size()));
      std::stringstream ss(rest);
      for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) members.push_back(item);
      }
      return GateSet(std::string(spec), std::move(members));
    }
    throw ConfigError("unknown gate set '" + std::string(spec) + "'");
  }

  const std::string& name() const { return name_; }
  const std::vector<std::string>& members() const { return members_; }

  friend bool operator==(const GateSet&, const GateSet&) = default;

 private:
  std::string name_;
  std::vector<std::string> members_;
};

/// Embeds a gate instance into the full 2^n-dimensional space.
inline UnitaryMatrix embed_gate(const GateInstance& g, int num_qubits) {
  const GateInstance checked = make_gate(g.gate, g.qubits, num_qubits);
  if (checked.qubits != g.qubits) {
    throw ValidationError("gate " + g.to_string() + " is not in canonical order");
  }
  const UnitaryMatrix local = base_matrix(g.gate);
  const int k = static_cast<int>(g.qubits.size());
  const Eigen::Index d = Eigen::Index{1} << num_qubits;
  const Eigen::Index local_dim = Eigen::Index{1} << k;

  auto bit_mask = [&](int q) { return Eigen::Index{1} << (num_qubits - 1 - q); };

  Eigen::MatrixXcd full = Eigen::MatrixXcd::Zero(d, d);
  for (Eigen::Index col = 0; col < d; ++col) {
    Eigen::Index local_col = 0;
    Eigen::Index rest = col;
    for (int a = 0; a < k; ++a) {
      const Eigen::Index mask = bit_mask(g.qubits[a]);
      local_col = (local_col << 1) | ((col & mask) ? 1 : 0);
      rest &= ~mask;
    }
    for (Eigen::Index local_row = 0; local_row < local_dim; ++local_row) {
      const Complex amp = local(local_row, local_col);
      if (amp == Complex(0.0, 0.0)) continue;
      Eigen::Index row = rest;
      for (int a = 0; a < k; ++a) {
        if ((local_row >> (k - 1 - a)) & 1) row |= bit_mask(g.qubits[a]);
      }
      full(row, col) = amp;
    }
  }
  return UnitaryMatrix(num_qubits, std::move(full));
}

// ---------------------------------------------------------------------------
// Action space

/// Every legal placement of every gate in a set on n qubits, in a fixed
/// order: gates in set order, placements lexicographic in the stored qubit
/// tuple. Embedded matrices are cached.
class ActionSpace {
 public:
  /// With `prune_oversized` a gate whose arity exceeds n is skipped instead
  /// of raising.
  ActionSpace(GateSet gate_set, int num_qubits, bool prune_oversized = false)
      : gate_set_(std::move(gate_set)), num_qubits_(num_qubits) {
    if (num_qubits_ < 1) throw ConfigError("qubit count must be >= 1");
    for (const auto& name : gate_set_.members()) {
      const int arity = gate_arity(name);
      if (arity > num_qubits_) {
        if (prune_oversized) continue;
        throw ConfigError(name + " needs " + std::to_string(arity) +
                          " qubits but the register has " +
                          std::to_string(num_qubits_));
      }
      std::vector<int> q(arity);
      enumerate_placements(name, q, 0);
    }
    matrices_.reserve(actions_.size());
    for (const auto& a : actions_) matrices_.push_back(embed_gate(a, num_qubits_));
    daggers_.reserve(matrices_.size());
    for (const auto& m : matrices_) daggers_.push_back(m.dagger());
  }

  const GateSet& gate_set() const { return gate_set_; }
  int num_qubits() const { return num_qubits_; }
  std::size_t size() const { return actions_.size(); }
  const std::vector<GateInstance>& actions() const { return actions_; }
  const GateInstance& operator[](std::size_t i) const { return actions_.at(i); }
  const UnitaryMatrix& matrix(std::size_t i) const { return matrices_.at(i); }
  const UnitaryMatrix& matrix_dagger(std::size_t i) const {
    return daggers_.at(i);
  }

  /// Index of a gate instance; throws ValidationError if absent.
  std::size_t index(const GateInstance& g) const {
    const GateInstance c = make_gate(g.gate, g.qubits, num_qubits_);
    auto it = std::find(actions_.begin(), actions_.end(), c);
    if (it == actions_.end()) {
      throw ValidationError(c.to_string() + " is not in the action space of " +
                            gate_set_.name());
    }
    return static_cast<std::size_t>(it - actions_.begin());
  }

  /// Stable text form of the enumeration, used for hashing.
  std::string describe() const {
    std::ostringstream os;
    os << gate_set_.name() << "|n=" << num_qubits_;
    for (const auto& a : actions_) os << '|' << a.to_string();
    return os.str();
  }

  /// 64-bit FNV-1a over describe(); stored in checkpoints.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : describe()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

 private:
  void enumerate_placements(const std::string& name, std::vector<int>& q,
                            std::size_t pos) {
    if (pos == q.size()) {
      // Symmetric gates: keep only the canonical (ascending) orientation.
      if (name == "SWAP" && q[0] > q[1]) return;
      if (name == "CCNOT" && q[0] > q[1]) return;
      actions_.push_back(make_gate(name, q, num_qubits_));
      return;
    }
    for (int v = 0; v < num_qubits_; ++v) {
      if (std::find(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(pos), v) !=
          q.begin() + static_cast<std::ptrdiff_t>(pos)) {
        continue;
      }
      q[pos] = v;
      enumerate_placements(name, q, pos + 1);
    }
  }

  GateSet gate_set_;
  int num_qubits_;
  std::vector<GateInstance> actions_;
  std::vector<UnitaryMatrix> matrices_;
  std::vector<UnitaryMatrix> daggers_;
};

inline ActionSpace action_space(const GateSet& gs, int num_qubits,
                                bool prune_oversized = false) {
  return ActionSpace(gs, num_qubits, prune_oversized);
}

/// Matrix of a circuit given as action indices (later gates on the left).
inline UnitaryMatrix circuit_matrix(const ActionSpace& space,
                                    std::span<const int> actions) {
  UnitaryMatrix m = UnitaryMatrix::identity(space.num_qubits());
  for (int a : actions) m = space.matrix(static_cast<std::size_t>(a)) * m;
  return m;
}

inline UnitaryMatrix circuit_matrix(std::span<const GateInstance> gates,
                                    int num_qubits) {
  UnitaryMatrix m = UnitaryMatrix::identity(num_qubits);
  for (const auto& g : gates) m = embed_gate(g, num_qubits) * m;
  return m;
}

struct RandomCircuit {
  UnitaryMatrix matrix;
  std::vector<GateInstance> circuit;
  std::vector<int> actions;
};

/// A circuit of exactly `depth` uniformly drawn actions and its matrix. The
/// depth bounds the minimal length from above; it is not necessarily minimal.
inline RandomCircuit random_target(int depth, const ActionSpace& space,
                                   Rng& rng) {
  if (depth < 1) throw ConfigError("random_target: depth must be >= 1");
  std::uniform_int_distribution<int> pick(0, static_cast<int>(space.size()) - 1);
  RandomCircuit out{UnitaryMatrix::identity(space.num_qubits()), {}, {}};
  for (int k = 0; k < depth; ++k) {
    const int a = pick(rng);
    out.actions.push_back(a);
    out.circuit.push_back(space[static_cast<std::size_t>(a)]);
    out.matrix = space.matrix(static_cast<std::size_t>(a)) * out.matrix;
  }
  return out;
}

inline RandomCircuit random_target(int depth, const GateSet& gs, int num_qubits,
                                   Rng& rng) {
  return random_target(depth, ActionSpace(gs, num_qubits), rng);
}

}  // namespace qflownet
