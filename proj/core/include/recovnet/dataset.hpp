// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "recovnet/image.hpp"
#include "recovnet/random.hpp"

namespace recovnet::data {

/// Class index order is fixed: 0 = control (negative), 1 = covid (positive).
enum class Label { kControl = 0, kCovid = 1 };
enum class Split { kUnassigned, kTrain, kTest };
enum class View { kUnknown, kFrontal, kLateral };
enum class Task { kClassification, kSegmentation };

std::string_view to_string(Label label);
std::string_view to_string(Split split);
std::string_view to_string(View view);
std::string_view to_string(Task task);
/// Accepts "control" / "covid"; anything else is a ValidationError.
Label parse_label(std::string_view text);

/// One row of a manifest: either a labeled image or an image with a lung mask.
struct SampleRecord {
  std::filesystem::path image_path;
  std::optional<Label> label;
  std::optional<std::filesystem::path> mask_path;
  std::string source;
  Split split = Split::kUnassigned;
  View view = View::kUnknown;

  Task task() const { return mask_path ? Task::kSegmentation : Task::kClassification; }
  /// Stratum and augmentation-target key: the source if set, else the label name.
  std::string group() const;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
  Task task = Task::kClassification;
  std::vector<SampleRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct ManifestLoadOptions {
  /// Verify every image_path / mask_path exists on disk.
  bool check_files = true;
};

inline constexpr std::string_view kManifestHeader = "image_path,label,mask_path,source,split,view";

/// Parses the CSV manifest. Relative paths resolve against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              const ManifestLoadOptions& options = {});

/// Writes the CSV manifest; paths are stored relative to the manifest's directory.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Throws ValidationError when records mix tasks or repeat an image_path.
void validate_manifest(const DatasetManifest& manifest);

enum class FillMode { kNearest };

struct AugmentationSpec {
  double shift_fraction = 0.10;
  double rotation_degrees = 10.0;
  FillMode fill_mode = FillMode::kNearest;

  void validate() const;
  bool is_identity() const { return shift_fraction == 0.0 && rotation_degrees == 0.0; }
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainTestSplit {
  DatasetManifest train;
  DatasetManifest test;
};

/// Per-group random split. Each group contributes floor(f*n + 1/2) training records;
/// both outputs keep the input order.
TrainTestSplit stratified_split(const DatasetManifest& manifest, const SplitSpec& spec);

/// Bilinear resize with half-pixel centers and edge clamping.
Image resize_image(const Image& image, int height, int width);

/// Concrete shift (pixels) and rotation (degrees, about the image center).
struct AffineParams {
  double shift_x = 0.0;
  double shift_y = 0.0;
  double rotation_degrees = 0.0;
};

/// Inverse-maps every output pixel with bilinear sampling; positions outside the
/// source replicate the nearest edge pixel.
Image apply_affine(const Image& image, const AffineParams& params);

/// Draws shift_x, shift_y, rotation uniformly from the ranges of `spec`.
AffineParams draw_affine(const AugmentationSpec& spec, int height, int width, Rng& rng);

Image augment_image(const Image& image, const AugmentationSpec& spec, Rng& rng);

/// The k-th augmented record is built from original `source_index` (k mod n) and
/// is that original's `variant`-th copy (1-based).
struct AugmentPlanItem {
  std::size_t source_index;
  int variant;
};

std::vector<AugmentPlanItem> plan_augmentation(std::size_t count, std::size_t target);

/// Returns all originals followed by (target - n) materialized variants written to
/// `out_dir` as `<stem>__aug<k>.png` (masks go to `out_dir/masks`).
DatasetManifest augment_to_target(const DatasetManifest& records, std::size_t target,
                                  const AugmentationSpec& spec, std::uint64_t seed,
                                  const std::filesystem::path& out_dir);

/// Augments each class to its target (passing through classes already at target),
/// concatenates and shuffles with `seed`. Class i writes into `out_dir/<i>_<group>`.
DatasetManifest build_training_set(std::span<const DatasetManifest> manifests,
                                   std::span<const std::size_t> targets,
                                   const AugmentationSpec& spec, std::uint64_t seed,
                                   const std::filesystem::path& out_dir);

/// Groups records by SampleRecord::group(), in order of first appearance.
std::vector<std::pair<std::string, DatasetManifest>> partition_by_group(
    const DatasetManifest& manifest);

}  // namespace recovnet::data
