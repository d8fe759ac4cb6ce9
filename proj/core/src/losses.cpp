// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "recovnet/error.hpp"

namespace recovnet::losses {
namespace {

constexpr double kLo = kProbabilityEpsilon;
constexpr double kHi = 1.0 - kProbabilityEpsilon;

void check_binary(const Tensor& target, const char* what) {
  for (double t : target.values())
    if (t != 0.0 && t != 1.0) throw ValidationError(std::string(what) + ": target must be binary");
}

void check_pixel_shapes(const Tensor& pred, const Tensor& target, const char* what) {
  require_same_shape(pred.shape(), target.shape(), what);
  if (pred.empty()) throw ShapeError(std::string(what) + ": empty prediction");
}

// (1 - p_t)^gamma with the convention 0^0 = 1.
double modulating(double one_minus_pt, double gamma) {
  return gamma == 0.0 ? 1.0 : std::pow(one_minus_pt, gamma);
}

LossResult focal_impl(const Tensor& pred, const Tensor& target, const FocalParams& params,
                      bool want_grad) {
  check_pixel_shapes(pred, target, "binary_focal_loss");
  check_binary(target, "binary_focal_loss");
  if (!(params.alpha > 0.0 && params.alpha < 1.0))
    throw ValidationError("binary_focal_loss: alpha must lie in (0, 1)");
  if (!(params.gamma >= 0.0)) throw ValidationError("binary_focal_loss: gamma must be >= 0");

  const auto n = static_cast<double>(pred.size());
  LossResult out;
  if (want_grad) out.grad = Tensor(pred.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool positive = target[i] == 1.0;
    const double p = std::clamp(pred[i], kLo, kHi);
    const double pt = positive ? p : 1.0 - p;
    const double at = positive ? params.alpha : 1.0 - params.alpha;
    const double logpt = std::log(pt);
    sum += -at * modulating(1.0 - pt, params.gamma) * logpt;

    if (want_grad && pred[i] > kLo && pred[i] < kHi) {
      // d/dp_t of -a (1-p_t)^g log p_t, then chain through dp_t/dp = +-1.
      double dpt = -at * modulating(1.0 - pt, params.gamma) / pt;
      if (params.gamma != 0.0)
        dpt += at * params.gamma * std::pow(1.0 - pt, params.gamma - 1.0) * logpt;
      out.grad[i] = (positive ? dpt : -dpt) / n;
    }
  }
  out.value = sum / n;
  return out;
}

LossResult dice_impl(const Tensor& pred, const Tensor& target, double smooth, bool want_grad) {
  check_pixel_shapes(pred, target, "dice_loss");
  check_binary(target, "dice_loss");
  if (!(smooth > 0.0)) throw ValidationError("dice_loss: smooth must be > 0");

  const std::int64_t batch = pred.shape().rank() > 0 ? pred.dim(0) : 1;
  const std::size_t per = pred.size() / static_cast<std::size_t>(batch);
  LossResult out;
  if (want_grad) out.grad = Tensor(pred.shape());
  double total = 0.0;
  for (std::int64_t b = 0; b < batch; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * per;
    double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
    for (std::size_t i = base; i < base + per; ++i) {
      inter += pred[i] * target[i];
      sum_p += pred[i];
      sum_t += target[i];
    }
    const double num = 2.0 * inter + smooth;
    const double den = sum_p + sum_t + smooth;
    total += 1.0 - num / den;
    if (want_grad) {
      for (std::size_t i = base; i < base + per; ++i)
        out.grad[i] = -(2.0 * target[i] * den - num) / (den * den) / static_cast<double>(batch);
    }
  }
  out.value = total / static_cast<double>(batch);
  return out;
}

LossResult cross_entropy_impl(const Tensor& probs, const Tensor& onehot, bool want_grad) {
  require_same_shape(probs.shape(), onehot.shape(), "categorical_cross_entropy");
  if (probs.shape().rank() != 2 || probs.empty())
    throw ShapeError("categorical_cross_entropy: expected (batch, classes), got " + probs.shape().str());
  const std::int64_t batch = probs.dim(0);
  const std::int64_t classes = probs.dim(1);
  for (std::int64_t b = 0; b < batch; ++b) {
    int ones = 0;
    for (std::int64_t c = 0; c < classes; ++c) {
      const double y = onehot[static_cast<std::size_t>(b * classes + c)];
      if (y != 0.0 && y != 1.0) throw ValidationError("categorical_cross_entropy: target is not one-hot");
      ones += y == 1.0;
    }
    if (ones != 1) throw ValidationError("categorical_cross_entropy: target is not one-hot");
  }

  LossResult out;
  if (want_grad) out.grad = Tensor(probs.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (onehot[i] == 0.0) continue;
    const double p = std::clamp(probs[i], kLo, kHi);
    sum += -std::log(p);
    if (want_grad && probs[i] > kLo && probs[i] < kHi)
      out.grad[i] = -1.0 / (p * static_cast<double>(batch));
  }
  out.value = sum / static_cast<double>(batch);
  return out;
}

}  // namespace

double binary_focal_loss(const Tensor& pred, const Tensor& target, const FocalParams& params) {
  return focal_impl(pred, target, params, false).value;
}

LossResult binary_focal_loss_with_grad(const Tensor& pred, const Tensor& target,
                                       const FocalParams& params) {
  return focal_impl(pred, target, params, true);
}

double dice_loss(const Tensor& pred, const Tensor& target, double smooth) {
  return dice_impl(pred, target, smooth, false).value;
}

LossResult dice_loss_with_grad(const Tensor& pred, const Tensor& target, double smooth) {
  return dice_impl(pred, target, smooth, true);
}

double hybrid_segmentation_loss(const Tensor& pred, const Tensor& target,
                                const SegmentationLossParams& params) {
  return binary_focal_loss(pred, target, params.focal) + dice_loss(pred, target, params.smooth);
}

LossResult hybrid_segmentation_loss_with_grad(const Tensor& pred, const Tensor& target,
                                              const SegmentationLossParams& params) {
  LossResult focal = binary_focal_loss_with_grad(pred, target, params.focal);
  LossResult dice = dice_loss_with_grad(pred, target, params.smooth);
  focal.value = focal.value + dice.value;
  focal.grad += dice.grad;
  return focal;
}

double categorical_cross_entropy(const Tensor& probs, const Tensor& onehot) {
  return cross_entropy_impl(probs, onehot, false).value;
}

LossResult categorical_cross_entropy_with_grad(const Tensor& probs, const Tensor& onehot) {
  return cross_entropy_impl(probs, onehot, true);
}

}  // namespace recovnet::losses
