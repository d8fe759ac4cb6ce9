// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "recovnet/error.hpp"
#include "recovnet/metrics.hpp"

using namespace recovnet;
using namespace recovnet::metrics;
using data::Label;

namespace {

void expect_row(const ConfusionMatrix& cm, const oracle::ReferenceRow& row) {
  const auto r = full_report(cm);
  EXPECT_NEAR(percent3(r.sensitivity), row.sensitivity, 1e-9);
  EXPECT_NEAR(percent3(r.specificity), row.specificity, 1e-9);
  EXPECT_NEAR(percent3(r.precision), row.precision, 1e-9);
  EXPECT_NEAR(percent3(r.f1), row.f1, 1e-9);
  EXPECT_NEAR(percent3(r.f2), row.f2, 1e-9);
  EXPECT_NEAR(percent3(r.accuracy), row.accuracy, 1e-9);
}

std::vector<Label> labels_for(const ConfusionMatrix& cm, std::vector<Label>& truth) {
  std::vector<Label> pred;
  auto add = [&](std::int64_t n, Label p, Label t) {
    for (std::int64_t i = 0; i < n; ++i) {
      pred.push_back(p);
      truth.push_back(t);
    }
  };
  add(cm.tp, Label::kCovid, Label::kCovid);
  add(cm.fp, Label::kCovid, Label::kControl);
  add(cm.tn, Label::kControl, Label::kControl);
  add(cm.fn, Label::kControl, Label::kCovid);
  return pred;
}

}  // namespace

TEST(ConfusionMatrix, ReferenceTalliesFromLabelLists) {
  std::vector<Label> truth;
  const auto pred = labels_for(oracle::kRecovNetV2Cm, truth);
  const auto cm = confusion_matrix(pred, truth);
  EXPECT_EQ(cm.tp, 1035);
  EXPECT_EQ(cm.fn, 15);
  EXPECT_EQ(cm.tn, 27334);
  EXPECT_EQ(cm.fp, 63);
  EXPECT_EQ(cm.total(), 28447);
}

TEST(ConfusionMatrix, MatchesCountingLoop) {
  std::mt19937_64 gen(1);
  std::bernoulli_distribution d(0.5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Label> p, t;
    for (int i = 0; i < 20; ++i) {
      p.push_back(d(gen) ? Label::kCovid : Label::kControl);
      t.push_back(d(gen) ? Label::kCovid : Label::kControl);
    }
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (int i = 0; i < 20; ++i) {
      const int pi = static_cast<int>(p[i]), ti = static_cast<int>(t[i]);
      tp += pi && ti;
      fp += pi && !ti;
      tn += !pi && !ti;
      fn += !pi && ti;
    }
    EXPECT_EQ(confusion_matrix(p, t), (ConfusionMatrix{tp, fp, tn, fn}));
  }
  const std::vector<Label> ok{Label::kCovid, Label::kControl, Label::kCovid, Label::kControl};
  const auto perfect = confusion_matrix(ok, ok);
  EXPECT_EQ(perfect.fp, 0);
  EXPECT_EQ(perfect.fn, 0);
  EXPECT_THROW(confusion_matrix({Label::kCovid}, {}), ValidationError);
}

TEST(Metrics, ReferenceRowsFromConfusionMatrices) {
  expect_row(oracle::kDenseNetCm, oracle::kDenseNetRow);
  expect_row(oracle::kRecovNetV2Cm, oracle::kRecovNetV2Row);
  const auto r = full_report(oracle::kRecovNetV2Cm);
  EXPECT_NEAR(r.sensitivity, 0.98571, 5e-6);
  EXPECT_NEAR(r.specificity, 0.99770, 5e-6);
  EXPECT_NEAR(r.precision, 0.94262, 5e-6);
  EXPECT_NEAR(r.accuracy, 0.99726, 5e-6);
}

TEST(Metrics, BaseRatesAndUndefined) {
  const auto one = full_report({1, 0, 1, 0});
  for (const auto& [_, v] : report_rows(one)) EXPECT_EQ(v, 1.0);
  const auto half = full_report({5, 5, 5, 5});
  EXPECT_EQ(half.sensitivity, 0.5);
  EXPECT_EQ(half.specificity, 0.5);
  EXPECT_EQ(half.precision, 0.5);
  EXPECT_EQ(half.accuracy, 0.5);
  EXPECT_THROW(sensitivity({0, 3, 3, 0}), UndefinedMetricError);
  EXPECT_THROW(specificity({3, 0, 0, 3}), UndefinedMetricError);
  EXPECT_THROW(precision({0, 0, 3, 3}), UndefinedMetricError);
  EXPECT_THROW(accuracy({}), UndefinedMetricError);
  EXPECT_THROW(full_report({}), UndefinedMetricError);
  EXPECT_THROW(f_score(0.0, 0.0, 1.0), UndefinedMetricError);
  EXPECT_THROW(f_score(0.5, 0.5, 0.0), ValidationError);
}

TEST(Metrics, RandomMatricesMatchBruteForce) {
  std::mt19937_64 gen(2);
  std::uniform_int_distribution<std::int64_t> d(1, 1000);
  for (int trial = 0; trial < 100; ++trial) {
    const ConfusionMatrix cm{d(gen), d(gen), d(gen), d(gen)};
    const double tp = cm.tp, fp = cm.fp, tn = cm.tn, fn = cm.fn;
    EXPECT_NEAR(sensitivity(cm), tp / (tp + fn), 1e-12);
    EXPECT_NEAR(specificity(cm), tn / (tn + fp), 1e-12);
    EXPECT_NEAR(precision(cm), tp / (tp + fp), 1e-12);
    EXPECT_NEAR(accuracy(cm), (tp + tn) / (tp + fp + tn + fn), 1e-12);
  }
}

TEST(FScore, ReferenceExamplesAndIdentities) {
  EXPECT_NEAR(f_score(0.99320, 0.97429, 1.0), 0.98365, 5e-6);
  EXPECT_NEAR(f_score(0.94262, 0.98571, 2.0), 0.97678, 5e-6);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.01, 1.0), b(0.1, 5.0);
  for (int i = 0; i < 100; ++i) {
    const double v = u(gen), beta = b(gen);
    EXPECT_NEAR(f_score(v, v, beta), v, 1e-15);
    const double p = u(gen), s = u(gen);
    EXPECT_NEAR(f_score(p, s, 1.0), 2 * p * s / (p + s), 1e-12);
  }
}

TEST(Percent, RoundHalfEvenAndFormatting) {
  EXPECT_EQ(percent3(0.123455), 12.346);
  EXPECT_EQ(percent3(0.5), 50.0);
  EXPECT_EQ(format_percent3(1035.0 / 1050.0), "98.571");
  const std::string md = markdown_table("ReCovNet-v2", full_report(oracle::kRecovNetV2Cm));
  EXPECT_NE(md.find("| ReCovNet-v2 | 98.571 | 99.770 | 94.262 | 96.369 | 97.678 | 99.726 |"), std::string::npos);
}

TEST(PixelConfusion, LoopOracleAndEdgeCases) {
  std::mt19937_64 gen(4);
  const Tensor a = oracle::random_binary(Shape{1, 8, 8, 1}, gen);
  const Tensor b = oracle::random_binary(Shape{1, 8, 8, 1}, gen);
  ConfusionMatrix expect;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 1 && b[i] == 1) ++expect.tp;
    if (a[i] == 1 && b[i] == 0) ++expect.fp;
    if (a[i] == 0 && b[i] == 0) ++expect.tn;
    if (a[i] == 0 && b[i] == 1) ++expect.fn;
  }
  EXPECT_EQ(pixel_confusion(a, b), expect);
  const auto same = pixel_confusion(a, a);
  EXPECT_EQ(same.fp + same.fn, 0);
  Tensor c = a;
  for (double& v : c.values()) v = 1.0 - v;
  const auto comp = pixel_confusion(c, a);
  EXPECT_EQ(comp.tp + comp.tn, 0);
  EXPECT_EQ((same + comp).total(), 128);
  EXPECT_THROW(pixel_confusion(a, Tensor(Shape{1, 8, 4, 1})), ShapeError);
}
