// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/metrics.hpp"

#include <cfenv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "recovnet/error.hpp"

namespace recovnet::metrics {
namespace {

double ratio(std::int64_t num, std::int64_t den, const char* metric) {
  if (den == 0) throw UndefinedMetricError(std::string(metric) + " is undefined: zero denominator");
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMatrix confusion_matrix(const std::vector<data::Label>& predicted,
                                 const std::vector<data::Label>& truth) {
  if (predicted.size() != truth.size())
    throw ValidationError("confusion_matrix: " + std::to_string(predicted.size()) + " predictions for " +
                          std::to_string(truth.size()) + " labels");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool pred_pos = predicted[i] == data::Label::kCovid;
    const bool true_pos = truth[i] == data::Label::kCovid;
    if (pred_pos && true_pos) ++cm.tp;
    else if (pred_pos) ++cm.fp;
    else if (true_pos) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

ConfusionMatrix pixel_confusion(const Tensor& pred_mask, const Tensor& truth_mask) {
  require_same_shape(pred_mask.shape(), truth_mask.shape(), "pixel_confusion");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] != 0.0;
    const bool t = truth_mask[i] != 0.0;
    if (p && t) ++cm.tp;
    else if (p) ++cm.fp;
    else if (t) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

double sensitivity(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fn, "sensitivity"); }
double specificity(const ConfusionMatrix& cm) { return ratio(cm.tn, cm.tn + cm.fp, "specificity"); }
double precision(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fp, "precision"); }
double accuracy(const ConfusionMatrix& cm) { return ratio(cm.tp + cm.tn, cm.total(), "accuracy"); }

double f_score(double precision, double sensitivity, double beta) {
  if (!(beta > 0.0)) throw ValidationError("f_score: beta must be > 0");
  const double b2 = beta * beta;
  const double den = b2 * precision + sensitivity;
  if (den == 0.0) throw UndefinedMetricError("f_score is undefined: zero denominator");
  return (1.0 + b2) * (precision * sensitivity) / den;
}

MetricsReport full_report(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.sensitivity = sensitivity(cm);
  r.specificity = specificity(cm);
  r.precision = precision(cm);
  r.accuracy = accuracy(cm);
  r.f1 = f_score(r.precision, r.sensitivity, 1.0);
  r.f2 = f_score(r.precision, r.sensitivity, 2.0);
  return r;
}

double percent3(double fraction) {
  const int previous = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double rounded = std::nearbyint(fraction * 100000.0) / 1000.0;
  std::fesetround(previous);
  return rounded;
}

std::string format_percent3(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", percent3(fraction));
  return buf;
}

std::vector<std::pair<std::string, double>> report_rows(const MetricsReport& r) {
  return {{"sensitivity", r.sensitivity}, {"specificity", r.specificity}, {"precision", r.precision},
          {"f1", r.f1},                   {"f2", r.f2},                   {"accuracy", r.accuracy}};
}

std::string markdown_table(const std::string& model_name, const MetricsReport& r) {
  std::ostringstream out;
  out << "| Model | Sensitivity | Specificity | Precision | F1-Score | F2-Score | Accuracy |\n"
      << "|---|---|---|---|---|---|---|\n"
      << "| " << model_name;
  for (const auto& [_, v] : report_rows(r)) out << " | " << format_percent3(v);
  out << " |\n";
  return out.str();
}

}  // namespace recovnet::metrics
