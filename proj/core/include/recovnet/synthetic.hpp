// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "recovnet/dataset.hpp"

namespace recovnet::synth {

/// Pixel box, inclusive-exclusive: [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
  bool contains(int x, int y) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Sample {
  Image image;      ///< 1 channel
  Image lung_mask;  ///< 1 channel, binary
  data::Label label = data::Label::kControl;
  Box lesion;  ///< empty for control samples
};

struct CorpusSpec {
  int count = 200;
  int size = 64;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  /// Small corner marker drawn on every image regardless of class.
  bool marker = true;
  double noise = 0.03;
  void validate() const;
};

/// Two dark elliptical lungs on a brighter body; covid samples carry a bright
/// square lesion inside one lung. Deterministic in (seed, index).
Sample make_sample(const CorpusSpec& spec, std::uint64_t index, data::Label label);

struct CorpusFiles {
  std::filesystem::path seg_train, seg_test, cls_train, cls_test;
  std::filesystem::path lesions;  ///< CSV: image_path,label,x0,y0,x1,y1
};

/// Writes images/, masks/ and the four manifests. Labels alternate control /
/// covid by index; the first train_fraction of each class (rounded) is train.
CorpusFiles write_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

struct LesionRecord {
  std::filesystem::path image_path;
  data::Label label = data::Label::kControl;
  Box box;
};
std::vector<LesionRecord> read_lesions(const std::filesystem::path& path);

}  // namespace recovnet::synth
