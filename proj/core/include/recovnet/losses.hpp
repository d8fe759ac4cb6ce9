// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "recovnet/tensor.hpp"

namespace recovnet::losses {

/// Clamp applied to probabilities before every logarithm (both p and 1-p).
inline constexpr double kProbabilityEpsilon = 1e-7;

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

struct SegmentationLossParams {
  FocalParams focal;
  double smooth = 1.0;
};

/// Scalar loss together with its gradient w.r.t. the prediction tensor.
struct LossResult {
  double value = 0.0;
  Tensor grad;
};

/// Mean over pixels of -a_t (1 - p_t)^gamma log(p_t).
/// `pred` is (batch, H, W, 1) post-sigmoid; `target` is the binary mask.
double binary_focal_loss(const Tensor& pred, const Tensor& target, const FocalParams& params = {});
LossResult binary_focal_loss_with_grad(const Tensor& pred, const Tensor& target,
                                       const FocalParams& params = {});

/// Soft dice, 1 - (2 sum(p t) + s) / (sum p + sum t + s), per sample then batch-averaged.
double dice_loss(const Tensor& pred, const Tensor& target, double smooth = 1.0);
LossResult dice_loss_with_grad(const Tensor& pred, const Tensor& target, double smooth = 1.0);

/// Unweighted focal + dice.
double hybrid_segmentation_loss(const Tensor& pred, const Tensor& target,
                                const SegmentationLossParams& params = {});
LossResult hybrid_segmentation_loss_with_grad(const Tensor& pred, const Tensor& target,
                                              const SegmentationLossParams& params = {});

/// Batch mean of -sum_c y_c log(p_c). `probs` and `onehot` are (batch, classes).
double categorical_cross_entropy(const Tensor& probs, const Tensor& onehot);
LossResult categorical_cross_entropy_with_grad(const Tensor& probs, const Tensor& onehot);

}  // namespace recovnet::losses
