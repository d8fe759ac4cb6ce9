// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/optimizer.hpp"

#include <cmath>

#include "recovnet/error.hpp"

namespace recovnet::train {

void Adam::step(const std::vector<ParamSlot>& slots) {
  if (m_.empty()) {
    for (const auto& s : slots) {
      m_.emplace_back(s.value->shape());
      v_.emplace_back(s.value->shape());
    }
  } else if (m_.size() != slots.size()) {
    throw ValidationError("Adam: parameter list changed between steps");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Tensor& p = *slots[i].value;
    const Tensor& g = *slots[i].grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace recovnet::train
