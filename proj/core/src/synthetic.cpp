// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "recovnet/error.hpp"

namespace fs = std::filesystem;

namespace recovnet::synth {
namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  bool inside(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

std::string index_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%04llu", static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

void CorpusSpec::validate() const {
  if (count < 4) throw ValidationError("synthetic corpus: count must be >= 4");
  if (size < 32) throw ValidationError("synthetic corpus: size must be >= 32");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("synthetic corpus: train_fraction must lie in (0,1)");
  if (!(noise >= 0.0)) throw ValidationError("synthetic corpus: noise must be >= 0");
}

Sample make_sample(const CorpusSpec& spec, std::uint64_t index, data::Label label) {
  spec.validate();
  const double s = spec.size;
  Rng rng(spec.seed, index);
  const Ellipse body{s * 0.5 + rng.uniform(-0.02, 0.02) * s, s * 0.52 + rng.uniform(-0.02, 0.02) * s,
                     s * rng.uniform(0.42, 0.46), s * rng.uniform(0.44, 0.48)};
  const double body_level = rng.uniform(0.5, 0.6);
  const double lung_level = rng.uniform(0.15, 0.25);
  const double gap = s * rng.uniform(0.19, 0.22);
  const double cy = s * 0.5 + rng.uniform(-0.03, 0.03) * s;
  Ellipse lungs[2];
  for (int i = 0; i < 2; ++i) {
    const double side = i == 0 ? -1.0 : 1.0;
    lungs[i] = {body.cx + side * gap + rng.uniform(-0.015, 0.015) * s, cy + rng.uniform(-0.02, 0.02) * s,
                s * rng.uniform(0.12, 0.15), s * rng.uniform(0.27, 0.32)};
  }

  Sample out;
  out.label = label;
  out.image = Image(spec.size, spec.size, 1);
  out.lung_mask = Image(spec.size, spec.size, 1);
  for (int y = 0; y < spec.size; ++y) {
    for (int x = 0; x < spec.size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double v = 0.08;
      if (body.inside(px, py)) v = body_level;
      if (lungs[0].inside(px, py) || lungs[1].inside(px, py)) {
        v = lung_level;
        out.lung_mask.at(y, x) = 1.0;
      }
      out.image.at(y, x) = v;
    }
  }

  if (label == data::Label::kCovid) {
    const Ellipse& lung = lungs[rng.below(2)];
    const int side = std::max(2, static_cast<int>(std::lround(s * rng.uniform(0.12, 0.18))));
    // Center drawn in the inner part of the lung so the square stays inside it.
    const double ux = rng.uniform(-0.35, 0.35), uy = rng.uniform(-0.5, 0.5);
    const int x0 = static_cast<int>(std::lround(lung.cx + ux * lung.rx - side / 2.0));
    const int y0 = static_cast<int>(std::lround(lung.cy + uy * lung.ry - side / 2.0));
    out.lesion = {std::clamp(x0, 0, spec.size - side), std::clamp(y0, 0, spec.size - side), 0, 0};
    out.lesion.x1 = out.lesion.x0 + side;
    out.lesion.y1 = out.lesion.y0 + side;
    const double level = rng.uniform(0.8, 0.95);
    for (int y = out.lesion.y0; y < out.lesion.y1; ++y)
      for (int x = out.lesion.x0; x < out.lesion.x1; ++x) out.image.at(y, x) = level;
  }

  if (spec.marker) {
    const int m = std::max(2, spec.size / 20);
    const int off = std::max(1, spec.size / 32);
    for (int y = off; y < off + m; ++y)
      for (int x = off; x < off + 2 * m; ++x) out.image.at(y, x) = 0.95;
  }

  for (double& v : out.image.pixels) v = std::clamp(v + spec.noise * rng.normal(), 0.0, 1.0);
  return out;
}

CorpusFiles write_corpus(const CorpusSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  data::DatasetManifest seg_train{data::Task::kSegmentation, {}}, seg_test{data::Task::kSegmentation, {}};
  data::DatasetManifest cls_train{data::Task::kClassification, {}}, cls_test{data::Task::kClassification, {}};

  const int per_class[2] = {(spec.count + 1) / 2, spec.count / 2};
  int seen[2] = {0, 0};
  std::ostringstream lesions;
  lesions << "image_path,label,x0,y0,x1,y1\n";
  for (int i = 0; i < spec.count; ++i) {
    const auto label = i % 2 == 0 ? data::Label::kControl : data::Label::kCovid;
    const int cls = static_cast<int>(label);
    const Sample sample = make_sample(spec, static_cast<std::uint64_t>(i), label);
    const std::string name = index_name(static_cast<std::uint64_t>(i));
    const fs::path image = out_dir / "images" / (name + ".png");
    const fs::path mask = out_dir / "masks" / (name + ".png");
    write_png(image, sample.image);
    write_png(mask, sample.lung_mask);

    const int n_train = static_cast<int>(std::floor(spec.train_fraction * per_class[cls] + 0.5));
    const bool train = seen[cls]++ < n_train;
    const auto split = train ? data::Split::kTrain : data::Split::kTest;
    data::SampleRecord seg{image, std::nullopt, mask, "synthetic", split, data::View::kFrontal};
    data::SampleRecord clf{image, label, std::nullopt, std::string(data::to_string(label)), split,
                           data::View::kFrontal};
    (train ? seg_train : seg_test).records.push_back(seg);
    (train ? cls_train : cls_test).records.push_back(clf);
    lesions << "images/" << name << ".png," << data::to_string(label) << ',' << sample.lesion.x0 << ','
            << sample.lesion.y0 << ',' << sample.lesion.x1 << ',' << sample.lesion.y1 << '\n';
  }

  CorpusFiles files{out_dir / "seg_train.csv", out_dir / "seg_test.csv", out_dir / "cls_train.csv",
                    out_dir / "cls_test.csv", out_dir / "lesions.csv"};
  data::save_manifest(seg_train, files.seg_train);
  data::save_manifest(seg_test, files.seg_test);
  data::save_manifest(cls_train, files.cls_train);
  data::save_manifest(cls_test, files.cls_test);
  std::ofstream out(files.lesions, std::ios::binary);
  if (!out) throw IoError("cannot write " + files.lesions.string());
  out << lesions.str();
  return files;
}

std::vector<LesionRecord> read_lesions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<LesionRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field[6];
    for (auto& f : field) std::getline(ss, f, ',');
    LesionRecord r;
    r.image_path = path.parent_path() / field[0];
    r.label = data::parse_label(field[1]);
    try {
      r.box = {std::stoi(field[2]), std::stoi(field[3]), std::stoi(field[4]), std::stoi(field[5])};
    } catch (const std::exception&) {
      throw ValidationError("malformed lesion row: " + line);
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace recovnet::synth
