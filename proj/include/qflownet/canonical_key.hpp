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

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include "qflownet/gate_algebra.hpp"

namespace qflownet {

/// Global-phase-invariant fingerprint of a unitary: the matrix is rotated
/// so that its first entry (row-major) with modulus > `tol` is real and
/// positive, then every component is rounded to `decimals` places and
/// packed as native-endian int64 pairs.
struct CanonicalKey {
  std::string bytes;

  friend bool operator==(const CanonicalKey&, const CanonicalKey&) = default;
  friend auto operator<=>(const CanonicalKey&, const CanonicalKey&) = default;

  /// 64-bit FNV-1a of the key bytes, printed in trajectory dumps.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }
};

struct CanonicalKeyHash {
  std::size_t operator()(const CanonicalKey& k) const {
    return static_cast<std::size_t>(k.hash());
  }
};

inline CanonicalKey canonical_key(const UnitaryMatrix& u, double tol = 1e-6,
                                  int decimals = 6) {
  const Eigen::MatrixXcd& m = u.matrix();
  const Eigen::Index d = m.rows();
  Complex phase(1.0, 0.0);
  for (Eigen::Index k = 0; k < d * d; ++k) {
    const Complex z = m(k / d, k % d);
    if (std::abs(z) > tol) {
      phase = std::conj(z) / std::abs(z);
      break;
    }
  }
  const double scale = std::pow(10.0, decimals);
  CanonicalKey key;
  key.bytes.reserve(static_cast<std::size_t>(d * d * 2 * 8 + 4));
  const std::int32_t n = u.num_qubits();
  key.bytes.append(reinterpret_cast<const char*>(&n), sizeof n);
  for (Eigen::Index k = 0; k < d * d; ++k) {
    const Complex z = m(k / d, k % d) * phase;
    for (double part : {z.real(), z.imag()}) {
      // llround maps -0.0 and tiny negatives to 0, so signed zeros merge.
      const std::int64_t q = std::llround(part * scale);
      key.bytes.append(reinterpret_cast<const char*>(&q), sizeof q);
    }
  }
  return key;
}

}  // namespace qflownet
