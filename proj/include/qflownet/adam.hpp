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

#include "qflownet/policy_net.hpp"

namespace qflownet {

/// Adam moments mirror the parameter layout, including log_z.
struct OptimizerState {
  PolicyParameters first_moment;
  PolicyParameters second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState for_params(const PolicyParameters& p) {
    return {p.zeros_like(), p.zeros_like(), 0, 0.9, 0.999, 1e-8};
  }
};

/// sqrt of the sum of squares over every gradient entry and log_z.
inline double global_norm(const PolicyParameters& g) {
  double sq = g.log_z * g.log_z;
  g.for_each_tensor([&](const std::string&, const auto& t) { sq += t.squaredNorm(); });
  return std::sqrt(sq);
}

/// Scales `g` in place so its global norm is at most `max_norm`. Returns
/// the norm before clipping.
inline double clip_global_norm(PolicyParameters& g, double max_norm) {
  const double norm = global_norm(g);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    g.for_each_tensor([&](const std::string&, auto& t) { t *= s; });
    g.log_z *= s;
  }
  return norm;
}

/// One bias-corrected Adam step. A zero step size leaves the corresponding
/// parameters untouched bit for bit.
inline void adam_update(PolicyParameters& params, OptimizerState& opt, const PolicyParameters& grad,
                        double learning_rate, double log_z_learning_rate) {
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));

  std::vector<double*> p_ptr, m_ptr, v_ptr;
  std::vector<const double*> g_ptr;
  std::vector<Eigen::Index> sizes;
  params.for_each_tensor([&](const std::string&, auto& t) {
    p_ptr.push_back(t.data());
    sizes.push_back(t.size());
  });
  opt.first_moment.for_each_tensor([&](const std::string&, auto& t) { m_ptr.push_back(t.data()); });
  opt.second_moment.for_each_tensor([&](const std::string&, auto& t) { v_ptr.push_back(t.data()); });
  grad.for_each_tensor([&](const std::string&, const auto& t) { g_ptr.push_back(t.data()); });

  for (std::size_t k = 0; k < p_ptr.size(); ++k) {
    for (Eigen::Index i = 0; i < sizes[k]; ++i) {
      double& m = m_ptr[k][i];
      double& v = v_ptr[k][i];
      const double g = g_ptr[k][i];
      m = opt.beta1 * m + (1.0 - opt.beta1) * g;
      v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
      if (learning_rate != 0.0) {
        p_ptr[k][i] -= learning_rate * (m / c1) / (std::sqrt(v / c2) + opt.epsilon);
      }
    }
  }
  double& m = opt.first_moment.log_z;
  double& v = opt.second_moment.log_z;
  m = opt.beta1 * m + (1.0 - opt.beta1) * grad.log_z;
  v = opt.beta2 * v + (1.0 - opt.beta2) * grad.log_z * grad.log_z;
  if (log_z_learning_rate != 0.0) {
    params.log_z -= log_z_learning_rate * (m / c1) / (std::sqrt(v / c2) + opt.epsilon);
  }
}

}  // namespace qflownet
