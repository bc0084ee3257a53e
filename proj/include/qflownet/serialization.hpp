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

// JSON interchange for circuits and matrices.
//
//   circuit: {"gates":[{"g":"CNOT","q":[0,1]},...],"n":2}
//   matrix:  {"matrix":[[re,im],...],"n":1}   (row-major, d*d pairs)

#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qflownet/gate_algebra.hpp"

namespace qflownet {

using Json = nlohmann::json;

struct Circuit {
  int num_qubits = 1;
  std::vector<GateInstance> gates;

  UnitaryMatrix matrix() const { return circuit_matrix(gates, num_qubits); }
};

inline Json circuit_to_json(const Circuit& c) {
  Json gates = Json::array();
  for (const auto& g : c.gates) gates.push_back({{"g", g.gate}, {"q", g.qubits}});
  return {{"gates", std::move(gates)}, {"n", c.num_qubits}};
}

inline Circuit circuit_from_json(const Json& j) {
  try {
    Circuit c;
    c.num_qubits = j.at("n").get<int>();
    for (const auto& g : j.at("gates")) {
      c.gates.push_back(make_gate(g.at("g").get<std::string>(),
                                  g.at("q").get<std::vector<int>>(),
                                  c.num_qubits));
    }
    return c;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed circuit JSON: ") + e.what());
  }
}

inline Json matrix_to_json(const UnitaryMatrix& u) {
  Json entries = Json::array();
  for (Eigen::Index r = 0; r < u.dim(); ++r) {
    for (Eigen::Index c = 0; c < u.dim(); ++c) {
      entries.push_back({u(r, c).real(), u(r, c).imag()});
    }
  }
  return {{"matrix", std::move(entries)}, {"n", u.num_qubits()}};
}

inline UnitaryMatrix matrix_from_json(const Json& j) {
  try {
    const int n = j.at("n").get<int>();
    const Json& entries = j.at("matrix");
    const Eigen::Index d = Eigen::Index{1} << n;
    if (static_cast<Eigen::Index>(entries.size()) != d * d) {
      throw ValidationError("matrix JSON holds " + std::to_string(entries.size()) +
                            " entries, expected " + std::to_string(d * d));
    }
    Eigen::MatrixXcd m(d, d);
    for (Eigen::Index k = 0; k < d * d; ++k) {
      const auto& e = entries[static_cast<std::size_t>(k)];
      m(k / d, k % d) = Complex(e.at(0).get<double>(), e.at(1).get<double>());
    }
    return UnitaryMatrix(n, std::move(m));
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed matrix JSON: ") + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

/// A target file holds either a circuit or a matrix object.
inline UnitaryMatrix target_from_json(const Json& j) {
  if (j.contains("gates")) return circuit_from_json(j).matrix();
  if (j.contains("matrix")) return matrix_from_json(j);
  throw ValidationError("target JSON has neither 'gates' nor 'matrix'");
}

}  // namespace qflownet
