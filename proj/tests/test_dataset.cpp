// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "recovnet/dataset.hpp"
#include "recovnet/error.hpp"

namespace fs = std::filesystem;
using namespace recovnet;
using namespace recovnet::data;

namespace {

DatasetManifest labeled(int n, const std::string& source, Label label) {
  DatasetManifest m;
  for (int i = 0; i < n; ++i) {
    SampleRecord r;
    r.image_path = source + "_" + std::to_string(i) + ".png";
    r.label = label;
    r.source = source;
    m.records.push_back(r);
  }
  return m;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

Image ramp(int h, int w) {
  Image im(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) im.at(y, x) = x / static_cast<double>(w - 1) + 0.01 * y;
  return im;
}

}  // namespace

TEST(Manifest, ParsesRowsInOrder) {
  const auto dir = oracle::temp_dir("manifest_parse");
  write_png(dir / "a.png", Image(4, 4, 1, 0.5));
  write_png(dir / "b.png", Image(4, 4, 1, 0.5));
  write_png(dir / "c.png", Image(4, 4, 1, 0.5));
  write_text(dir / "m.csv",
             "image_path,label,mask_path,source,split,view\n"
             "a.png,covid,,qata,train,frontal\n"
             "b.png,control,,\"chest, x-ray14\",,\n"
             "c.png,control,,,test,lateral\n");
  const auto m = load_manifest(dir / "m.csv");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.task, Task::kClassification);
  EXPECT_EQ(m.records[0].image_path, dir / "a.png");
  EXPECT_EQ(*m.records[0].label, Label::kCovid);
  EXPECT_EQ(m.records[0].split, Split::kTrain);
  EXPECT_EQ(m.records[1].source, "chest, x-ray14");
  EXPECT_EQ(m.records[1].split, Split::kUnassigned);
  EXPECT_EQ(m.records[2].view, View::kLateral);
  EXPECT_EQ(m.records[2].group(), "control");
}

TEST(Manifest, HeaderOnlyIsEmpty) {
  const auto dir = oracle::temp_dir("manifest_empty");
  write_text(dir / "m.csv", "image_path,label,mask_path,source,split,view\n");
  EXPECT_TRUE(load_manifest(dir / "m.csv").empty());
}

TEST(Manifest, AmbiguousTaskReportsRow) {
  const auto dir = oracle::temp_dir("manifest_ambiguous");
  write_png(dir / "a.png", Image(4, 4, 1));
  write_text(dir / "m.csv",
             "image_path,label,mask_path,source,split,view\n"
             "a.png,covid,,,,\n"
             "a2.png,covid,a.png,,,\n");
  try {
    load_manifest(dir / "m.csv", {.check_files = false});
    FAIL() << "expected ManifestError";
  } catch (const ManifestError& e) {
    EXPECT_EQ(e.row(), 3u);
    EXPECT_NE(std::string(e.what()).find("ambiguous task"), std::string::npos);
  }
}

TEST(Manifest, RejectsMalformedInput) {
  const auto dir = oracle::temp_dir("manifest_bad");
  EXPECT_THROW(load_manifest(dir / "missing.csv"), IoError);
  write_text(dir / "h.csv", "path,label\n");
  EXPECT_THROW(load_manifest(dir / "h.csv"), ManifestError);
  write_text(dir / "cols.csv", "image_path,label,mask_path,source,split,view\na.png,covid\n");
  EXPECT_THROW(load_manifest(dir / "cols.csv", {.check_files = false}), ManifestError);
  write_text(dir / "label.csv", "image_path,label,mask_path,source,split,view\na.png,flu,,,,\n");
  EXPECT_THROW(load_manifest(dir / "label.csv", {.check_files = false}), ManifestError);
  write_text(dir / "mixed.csv",
             "image_path,label,mask_path,source,split,view\na.png,covid,,,,\nb.png,,m.png,,,\n");
  EXPECT_THROW(load_manifest(dir / "mixed.csv", {.check_files = false}), ManifestError);
  write_text(dir / "dup.csv", "image_path,label,mask_path,source,split,view\na.png,covid,,,,\na.png,covid,,,,\n");
  EXPECT_THROW(load_manifest(dir / "dup.csv", {.check_files = false}), ManifestError);
  write_text(dir / "nofile.csv", "image_path,label,mask_path,source,split,view\nnope.png,covid,,,,\n");
  EXPECT_THROW(load_manifest(dir / "nofile.csv"), ManifestError);
}

TEST(Manifest, SaveLoadRoundTrip) {
  const auto dir = oracle::temp_dir("manifest_roundtrip");
  write_png(dir / "img" / "a.png", Image(4, 4, 1));
  write_png(dir / "img" / "m.png", Image(4, 4, 1));
  DatasetManifest m{Task::kSegmentation, {}};
  m.records.push_back({dir / "img" / "a.png", std::nullopt, dir / "img" / "m.png", "jsrt", Split::kTest, View::kFrontal});
  save_manifest(m, dir / "out" / "m.csv");
  EXPECT_EQ(load_manifest(dir / "out" / "m.csv").records[0].image_path.lexically_normal(),
            (dir / "img" / "a.png").lexically_normal());
}

TEST(StratifiedSplit, ReferenceCountsAndSegmentationRatio) {
  const auto covid = labeled(4603, "covid", Label::kCovid);
  const auto s = stratified_split(covid, {3553.0 / 4603.0, 7});
  EXPECT_EQ(s.train.size(), 3553u);
  EXPECT_EQ(s.test.size(), 1050u);

  DatasetManifest seg{Task::kSegmentation, {}};
  for (int i = 0; i < 385; ++i)
    seg.records.push_back({"s" + std::to_string(i) + ".png", std::nullopt, "m" + std::to_string(i) + ".png", "", Split::kUnassigned, View::kFrontal});
  const auto ss = stratified_split(seg, {0.8, 1});
  EXPECT_EQ(ss.train.size(), 308u);
  EXPECT_EQ(ss.test.size(), 77u);
}

TEST(StratifiedSplit, DeterministicDisjointExhaustive) {
  DatasetManifest m = labeled(10, "a", Label::kControl);
  for (auto& r : labeled(7, "b", Label::kCovid).records) m.records.push_back(r);
  const auto one = stratified_split(m, {0.5, 3});
  const auto two = stratified_split(m, {0.5, 3});
  EXPECT_EQ(one.train, two.train);
  EXPECT_EQ(one.test, two.test);
  std::set<fs::path> train, test;
  for (const auto& r : one.train.records) train.insert(r.image_path);
  for (const auto& r : one.test.records) test.insert(r.image_path);
  for (const auto& p : train) EXPECT_EQ(test.count(p), 0u);
  EXPECT_EQ(train.size() + test.size(), m.size());
  const auto counts = oracle::group_counts(one.train);
  EXPECT_EQ(counts.at("a"), 5u);
  EXPECT_EQ(counts.at("b"), static_cast<std::size_t>(std::floor(0.5 * 7 + 0.5)));

  bool changed = false;
  for (std::uint64_t seed = 4; seed < 10 && !changed; ++seed)
    changed = stratified_split(m, {0.5, seed}).train != one.train;
  EXPECT_TRUE(changed);
}

TEST(StratifiedSplit, RejectsTinyStrataAndAssignedRecords) {
  EXPECT_THROW(stratified_split(labeled(1, "a", Label::kCovid), {0.5, 0}), ValidationError);
  auto m = labeled(4, "a", Label::kCovid);
  m.records[0].split = Split::kTrain;
  EXPECT_THROW(stratified_split(m, {0.5, 0}), ValidationError);
  EXPECT_THROW(stratified_split(labeled(4, "a", Label::kCovid), {1.0, 0}), ValidationError);
}

TEST(Resize, CheckerboardMatchesHandBilinear) {
  Image board(2, 2, 1);
  board.at(0, 1) = 1.0;
  board.at(1, 0) = 1.0;
  const Image out = resize_image(board, 4, 4);
  // Half-pixel centers map output index i to source coordinate (i + 0.5) / 2 - 0.5,
  // clamped to [0, 1]; bilinear on the checkerboard gives u + v - 2uv.
  const double coord[4] = {0.0, 0.25, 0.75, 1.0};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double u = coord[x], v = coord[y];
      EXPECT_NEAR(out.at(y, x), u + v - 2 * u * v, 1e-12) << y << "," << x;
    }
}

TEST(Resize, ShapeIdentityAndRange) {
  const Image im = ramp(16, 12);
  EXPECT_EQ(resize_image(im, 16, 12), im);
  const Image big(64, 48, 3, 0.25);
  const Image small = resize_image(big, 14, 14);
  EXPECT_EQ(small.height, 14);
  EXPECT_EQ(small.width, 14);
  EXPECT_EQ(small.channels, 3);
  const Image r = resize_image(im, 7, 9);
  const auto [lo, hi] = std::minmax_element(im.pixels.begin(), im.pixels.end());
  for (double v : r.pixels) {
    EXPECT_GE(v, *lo - 1e-12);
    EXPECT_LE(v, *hi + 1e-12);
  }
  EXPECT_THROW(resize_image(im, 0, 4), ValidationError);
}

TEST(Augment, ZeroSpecIsIdentity) {
  const Image im = ramp(9, 11);
  Rng rng(5);
  const AugmentationSpec zero{0.0, 0.0};
  EXPECT_TRUE(zero.is_identity());
  EXPECT_EQ(augment_image(im, zero, rng), im);
}

TEST(Augment, TwoPixelShiftReplicatesEdge) {
  const Image im = ramp(8, 8);
  const Image out = apply_affine(im, {2.0, 0.0, 0.0});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_NEAR(out.at(y, x), im.at(y, std::max(0, x - 2)), 1e-12);
}

TEST(Augment, DeterministicForSeed) {
  const Image im = ramp(16, 16);
  Rng a(11), b(11);
  const AugmentationSpec spec;
  EXPECT_EQ(augment_image(im, spec, a), augment_image(im, spec, b));
  Rng c(12);
  const auto p = draw_affine(spec, 16, 16, c);
  EXPECT_LE(std::abs(p.shift_x), 1.6);
  EXPECT_LE(std::abs(p.shift_y), 1.6);
  EXPECT_LE(std::abs(p.rotation_degrees), 10.0);
}

TEST(Augment, SpecValidation) {
  EXPECT_THROW((AugmentationSpec{1.0, 0.0}.validate()), ValidationError);
  EXPECT_THROW((AugmentationSpec{0.1, 181.0}.validate()), ValidationError);
  EXPECT_NO_THROW(AugmentationSpec{}.validate());
}

TEST(AugmentToTarget, RoundRobinPlan) {
  const auto plan = plan_augmentation(3, 10);
  ASSERT_EQ(plan.size(), 7u);
  std::vector<int> per(3, 0);
  for (const auto& item : plan) ++per[item.source_index];
  EXPECT_LE(*std::max_element(per.begin(), per.end()) - *std::min_element(per.begin(), per.end()), 1);
  EXPECT_EQ(plan[0].source_index, 0u);
  EXPECT_EQ(plan[3].variant, 2);
}

TEST(AugmentToTarget, CountsAndOriginals) {
  const auto dir = oracle::temp_dir("augment_target");
  const auto manifest = load_manifest(oracle::write_group_fixture(dir, {{"viral", 3}}, 8, 1));
  const auto out = augment_to_target(manifest, 8, {}, 2, dir / "aug");
  ASSERT_EQ(out.size(), 8u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.records[i], manifest.records[i]);
  for (std::size_t i = 3; i < 8; ++i) {
    EXPECT_TRUE(fs::exists(out.records[i].image_path));
    EXPECT_NE(out.records[i].image_path.filename().string().find("__aug"), std::string::npos);
  }
  EXPECT_EQ(augment_to_target(manifest, 3, {}, 2, dir / "aug3"), manifest);
  EXPECT_THROW(augment_to_target(manifest, 2, {}, 2, dir / "aug2"), ValidationError);
  const auto again = augment_to_target(manifest, 8, {}, 2, dir / "aug_again");
  for (std::size_t i = 3; i < 8; ++i)
    EXPECT_EQ(read_image(again.records[i].image_path, ColorMode::kNative),
              read_image(out.records[i].image_path, ColorMode::kNative));
}

TEST(BuildTrainingSet, PerClassTargetsAndFullScaleTotal) {
  const auto dir = oracle::temp_dir("build_training");
  const auto fixture = load_manifest(oracle::write_group_fixture(dir, {{"a", 3}, {"b", 3}}, 8, 3));
  const auto groups = partition_by_group(fixture);
  std::vector<DatasetManifest> per{groups[0].second, groups[1].second};
  const std::size_t targets[] = {5, 5};
  const auto out = build_training_set(per, targets, {}, 4, dir / "aug");
  EXPECT_EQ(out.size(), 10u);
  const auto counts = oracle::group_counts(out);
  EXPECT_EQ(counts.at("a"), 5u);
  EXPECT_EQ(counts.at("b"), 5u);
  EXPECT_EQ(build_training_set(per, targets, {}, 4, dir / "aug_b"), build_training_set(per, targets, {}, 4, dir / "aug_b"));

  const std::size_t pass[] = {3};
  std::vector<DatasetManifest> single{groups[0].second};
  EXPECT_EQ(oracle::group_counts(build_training_set(single, pass, {}, 4, dir / "aug_c")).at("a"), 3u);

  // Full-scale per-group targets sum to the augmented training total.
  const std::size_t full_scale_targets[] = {86524, 5000, 5000, 5000, 10000};
  std::size_t total = 0;
  for (std::size_t t : full_scale_targets) total += t;
  EXPECT_EQ(total, 111524u);
}
