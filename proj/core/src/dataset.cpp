// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "recovnet/error.hpp"

namespace fs = std::filesystem;

namespace recovnet::data {

std::string_view to_string(Label label) {
  return label == Label::kCovid ? "covid" : "control";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kUnassigned: break;
  }
  return "unassigned";
}

std::string_view to_string(View view) {
  switch (view) {
    case View::kFrontal: return "frontal";
    case View::kLateral: return "lateral";
    case View::kUnknown: break;
  }
  return "unknown";
}

std::string_view to_string(Task task) {
  return task == Task::kSegmentation ? "segmentation" : "classification";
}

Label parse_label(std::string_view text) {
  if (text == "covid") return Label::kCovid;
  if (text == "control") return Label::kControl;
  throw ValidationError("unknown label '" + std::string(text) + "'");
}

std::string SampleRecord::group() const {
  if (!source.empty()) return source;
  if (label) return std::string(to_string(*label));
  return "all";
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t row) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  if (quoted) throw ManifestError(row, "unterminated quoted field");
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char ch : value) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

Split parse_split(std::string_view text, std::size_t row) {
  if (text.empty() || text == "unassigned") return Split::kUnassigned;
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  throw ManifestError(row, "unknown split '" + std::string(text) + "'");
}

View parse_view(std::string_view text, std::size_t row) {
  if (text.empty() || text == "unknown") return View::kUnknown;
  if (text == "frontal") return View::kFrontal;
  if (text == "lateral") return View::kLateral;
  throw ManifestError(row, "unknown view '" + std::string(text) + "'");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

std::string relative_to(const fs::path& p, const fs::path& dir) {
  const fs::path rel = fs::absolute(p).lexically_normal().lexically_relative(
      fs::absolute(dir).lexically_normal());
  return rel.empty() ? p.generic_string() : rel.generic_string();
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, const ManifestLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest not found: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ManifestError(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw ManifestError(1, "header must be '" + std::string(kManifestHeader) + "'");

  const fs::path base = path.parent_path();
  DatasetManifest manifest;
  std::set<fs::path> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line, row);
    if (fields.size() != 6)
      throw ManifestError(row, "expected 6 columns, found " + std::to_string(fields.size()));

    SampleRecord record;
    if (fields[0].empty()) throw ManifestError(row, "empty image_path");
    record.image_path = resolve(base, fields[0]);
    const bool has_label = !fields[1].empty();
    const bool has_mask = !fields[2].empty();
    if (has_label && has_mask) throw ManifestError(row, "ambiguous task: both label and mask_path set");
    if (!has_label && !has_mask) throw ManifestError(row, "one of label or mask_path is required");
    if (has_label) {
      try {
        record.label = parse_label(fields[1]);
      } catch (const ValidationError& e) {
        throw ManifestError(row, e.what());
      }
    } else {
      record.mask_path = resolve(base, fields[2]);
    }
    record.source = fields[3];
    record.split = parse_split(fields[4], row);
    record.view = parse_view(fields[5], row);

    if (manifest.records.empty()) {
      manifest.task = record.task();
    } else if (record.task() != manifest.task) {
      throw ManifestError(row, "mixed tasks: manifest is " + std::string(to_string(manifest.task)));
    }
    if (!seen.insert(record.image_path).second)
      throw ManifestError(row, "duplicate image_path " + record.image_path.string());
    if (options.check_files) {
      if (!fs::exists(record.image_path))
        throw ManifestError(row, "image not found: " + record.image_path.string());
      if (record.mask_path && !fs::exists(*record.mask_path))
        throw ManifestError(row, "mask not found: " + record.mask_path->string());
    }
    manifest.records.push_back(std::move(record));
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::error_code dir_ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), dir_ec);
  if (dir_ec) throw IoError("cannot create " + path.parent_path().string() + ": " + dir_ec.message());
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& r : manifest.records) {
    out << csv_field(relative_to(r.image_path, dir)) << ','
        << (r.label ? to_string(*r.label) : "") << ','
        << (r.mask_path ? csv_field(relative_to(*r.mask_path, dir)) : "") << ','
        << csv_field(r.source) << ',' << (r.split == Split::kUnassigned ? "" : to_string(r.split))
        << ',' << (r.view == View::kUnknown ? "" : to_string(r.view)) << '\n';
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write manifest: " + path.string());
  file << out.str();
  if (!file) throw IoError("cannot write manifest: " + path.string());
}

void validate_manifest(const DatasetManifest& manifest) {
  std::set<fs::path> seen;
  for (const auto& r : manifest.records) {
    if (r.task() != manifest.task) throw ValidationError("manifest mixes tasks");
    if (!seen.insert(r.image_path).second)
      throw ValidationError("duplicate image_path " + r.image_path.string());
  }
}

void AugmentationSpec::validate() const {
  if (!(shift_fraction >= 0.0 && shift_fraction < 1.0))
    throw ValidationError("shift_fraction must lie in [0, 1)");
  if (!(rotation_degrees >= 0.0 && rotation_degrees <= 180.0))
    throw ValidationError("rotation_degrees must lie in [0, 180]");
}

void SplitSpec::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must lie in (0, 1)");
}

std::vector<std::pair<std::string, DatasetManifest>> partition_by_group(
    const DatasetManifest& manifest) {
  std::vector<std::pair<std::string, DatasetManifest>> groups;
  for (const auto& r : manifest.records) {
    const std::string key = r.group();
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
    if (it == groups.end()) {
      groups.push_back({key, DatasetManifest{manifest.task, {}}});
      it = std::prev(groups.end());
    }
    it->second.records.push_back(r);
  }
  return groups;
}

TrainTestSplit stratified_split(const DatasetManifest& manifest, const SplitSpec& spec) {
  spec.validate();
  validate_manifest(manifest);

  // Group membership as index lists so output keeps input order.
  std::vector<std::string> keys;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.split != Split::kUnassigned)
      throw ValidationError("stratified_split: record " + r.image_path.string() +
                            " already has split " + std::string(to_string(r.split)));
    const std::string key = r.group();
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      members.emplace_back();
      it = std::prev(keys.end());
    }
    members[static_cast<std::size_t>(it - keys.begin())].push_back(i);
  }

  std::vector<Split> assignment(manifest.records.size(), Split::kTest);
  for (std::size_t g = 0; g < keys.size(); ++g) {
    auto indices = members[g];
    if (indices.size() < 2)
      throw ValidationError("stratum '" + keys[g] + "' has " + std::to_string(indices.size()) +
                            " record(s); at least 2 are needed to split");
    const auto n_train = static_cast<std::size_t>(
        std::floor(spec.train_fraction * static_cast<double>(indices.size()) + 0.5));
    Rng rng(spec.seed, hash_string(keys[g]));
    rng.shuffle(indices);
    for (std::size_t k = 0; k < n_train; ++k) assignment[indices[k]] = Split::kTrain;
  }

  TrainTestSplit out{{manifest.task, {}}, {manifest.task, {}}};
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    SampleRecord r = manifest.records[i];
    r.split = assignment[i];
    (r.split == Split::kTrain ? out.train : out.test).records.push_back(std::move(r));
  }
  return out;
}

namespace {

double sample_bilinear(const Image& im, double sy, double sx, int c) {
  sy = std::clamp(sy, 0.0, static_cast<double>(im.height - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(im.width - 1));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, im.height - 1);
  const int x1 = std::min(x0 + 1, im.width - 1);
  const double fy = sy - y0;
  const double fx = sx - x0;
  if (fy == 0.0 && fx == 0.0) return im.at(y0, x0, c);
  const double top = im.at(y0, x0, c) * (1.0 - fx) + im.at(y0, x1, c) * fx;
  const double bottom = im.at(y1, x0, c) * (1.0 - fx) + im.at(y1, x1, c) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

}  // namespace

Image resize_image(const Image& image, int height, int width) {
  if (image.empty()) throw ValidationError("resize_image: empty image");
  if (height <= 0 || width <= 0) throw ValidationError("resize_image: zero-dimension request");
  if (height == image.height && width == image.width) return image;

  const double scale_y = static_cast<double>(image.height) / height;
  const double scale_x = static_cast<double>(image.width) / width;
  Image out(height, width, image.channels);
  for (int y = 0; y < height; ++y) {
    const double sy = (y + 0.5) * scale_y - 0.5;
    for (int x = 0; x < width; ++x) {
      const double sx = (x + 0.5) * scale_x - 0.5;
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = sample_bilinear(image, sy, sx, c);
    }
  }
  return out;
}

Image apply_affine(const Image& image, const AffineParams& params) {
  if (image.empty()) throw ValidationError("apply_affine: empty image");
  const double theta = params.rotation_degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cy = (image.height - 1) / 2.0;
  const double cx = (image.width - 1) / 2.0;

  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      // Undo the shift, then the rotation about the center.
      const double dx = x - cx - params.shift_x;
      const double dy = y - cy - params.shift_y;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = sample_bilinear(image, sy, sx, c);
    }
  }
  return out;
}

AffineParams draw_affine(const AugmentationSpec& spec, int height, int width, Rng& rng) {
  spec.validate();
  AffineParams p;
  p.shift_x = rng.uniform(-spec.shift_fraction, spec.shift_fraction) * width;
  p.shift_y = rng.uniform(-spec.shift_fraction, spec.shift_fraction) * height;
  p.rotation_degrees = rng.uniform(-spec.rotation_degrees, spec.rotation_degrees);
  return p;
}

Image augment_image(const Image& image, const AugmentationSpec& spec, Rng& rng) {
  return apply_affine(image, draw_affine(spec, image.height, image.width, rng));
}

std::vector<AugmentPlanItem> plan_augmentation(std::size_t count, std::size_t target) {
  if (target < count)
    throw ValidationError("augmentation target " + std::to_string(target) +
                          " is below the current count " + std::to_string(count));
  if (count == 0 && target > 0) throw ValidationError("cannot augment an empty record set");
  std::vector<AugmentPlanItem> plan;
  plan.reserve(target - count);
  for (std::size_t k = 0; k < target - count; ++k)
    plan.push_back({k % count, static_cast<int>(k / count) + 1});
  return plan;
}

namespace {

Image binarize(Image mask) {
  for (double& v : mask.pixels) v = v >= 0.5 ? 1.0 : 0.0;
  return mask;
}

fs::path variant_path(const fs::path& dir, const fs::path& original, int variant) {
  return dir / (original.stem().string() + "__aug" + std::to_string(variant) + ".png");
}

}  // namespace

DatasetManifest augment_to_target(const DatasetManifest& records, std::size_t target,
                                  const AugmentationSpec& spec, std::uint64_t seed,
                                  const fs::path& out_dir) {
  spec.validate();
  const auto plan = plan_augmentation(records.size(), target);
  DatasetManifest out = records;
  if (plan.empty()) return out;

  std::set<std::string> stems;
  for (const auto& r : records.records) {
    if (r.split == Split::kTest) throw ValidationError("augment_to_target: test record " + r.image_path.string());
    if (!stems.insert(r.image_path.stem().string()).second)
      throw ValidationError("augment_to_target: duplicate file stem '" +
                            r.image_path.stem().string() + "' would collide");
  }

  fs::create_directories(out_dir);
  for (const auto& item : plan) {
    const SampleRecord& original = records.records[item.source_index];
    // Stream keyed by (record, variant) so the output is independent of processing order.
    Rng rng(mix_seed(seed, item.source_index), static_cast<std::uint64_t>(item.variant));
    const Image image = read_image(original.image_path, ColorMode::kNative);
    const AffineParams params = draw_affine(spec, image.height, image.width, rng);

    SampleRecord aug = original;
    aug.split = Split::kTrain;
    aug.image_path = variant_path(out_dir, original.image_path, item.variant);
    write_png(aug.image_path, apply_affine(image, params));
    if (original.mask_path) {
      const Image mask = read_image(*original.mask_path, ColorMode::kGray);
      aug.mask_path = variant_path(out_dir / "masks", *original.mask_path, item.variant);
      write_png(*aug.mask_path, binarize(apply_affine(mask, params)));
    }
    out.records.push_back(std::move(aug));
  }
  return out;
}

DatasetManifest build_training_set(std::span<const DatasetManifest> manifests,
                                   std::span<const std::size_t> targets,
                                   const AugmentationSpec& spec, std::uint64_t seed,
                                   const fs::path& out_dir) {
  if (manifests.size() != targets.size())
    throw ValidationError("build_training_set: need one target per class");
  DatasetManifest out;
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    const auto& m = manifests[i];
    if (i == 0) {
      out.task = m.task;
    } else if (!m.empty() && m.task != out.task) {
      throw ValidationError("build_training_set: classes mix tasks");
    }
    const std::string group = m.empty() ? "empty" : m.records.front().group();
    const fs::path dir = out_dir / (std::to_string(i) + "_" + group);
    DatasetManifest grown = augment_to_target(m, targets[i], spec, mix_seed(seed, i), dir);
    for (auto& r : grown.records) out.records.push_back(std::move(r));
  }
  Rng rng(seed, hash_string("build_training_set.shuffle"));
  rng.shuffle(out.records);
  return out;
}

}  // namespace recovnet::data
