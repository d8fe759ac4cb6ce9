// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recovnet/dataset.hpp"
#include "recovnet/tensor.hpp"

namespace recovnet::metrics {

/// COVID-19 is the positive class, the control group the negative class.
struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const noexcept { return tp + fp + tn + fn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) noexcept { return a += b; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion_matrix(const std::vector<data::Label>& predicted,
                                 const std::vector<data::Label>& truth);

/// Per-pixel matrix with mask foreground (1) as the positive class.
ConfusionMatrix pixel_confusion(const Tensor& pred_mask, const Tensor& truth_mask);

// Each throws UndefinedMetricError when its denominator is zero.
double sensitivity(const ConfusionMatrix& cm);
double specificity(const ConfusionMatrix& cm);
double precision(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

/// (1 + b^2) p s / (b^2 p + s).
double f_score(double precision, double sensitivity, double beta);

struct MetricsReport {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  double accuracy = 0.0;
};

MetricsReport full_report(const ConfusionMatrix& cm);

/// Fraction -> percent rounded half-to-even at three decimals, e.g. 0.985714 -> 98.571.
double percent3(double fraction);
/// percent3 formatted with exactly three decimals.
std::string format_percent3(double fraction);

/// Column order: Sensitivity, Specificity, Precision, F1-Score, F2-Score, Accuracy.
std::vector<std::pair<std::string, double>> report_rows(const MetricsReport& report);
std::string markdown_table(const std::string& model_name, const MetricsReport& report);

}  // namespace recovnet::metrics
