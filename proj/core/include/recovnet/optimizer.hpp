// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "recovnet/tensor.hpp"

namespace recovnet::train {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

struct ParamSlot {
  Tensor* value;
  const Tensor* grad;
};

/// Adam with bias-corrected moments. Moment buffers are created on the first step
/// and keyed by slot position, so the slot list must keep its order.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(const std::vector<ParamSlot>& slots);
  long steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace recovnet::train
