// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "recovnet/networks.hpp"

namespace recovnet::nn {

// Checkpoint layout (little-endian):
//   "RCVNCKPT" | u32 version | u32 kind | u64 n | n bytes of JSON metadata
//   | u64 tensor count | { u32 len, name, u32 rank, i64 dims[rank], f64 values[] }...
//   | u64 FNV-1a of every preceding byte
// The metadata records specs, layer topology, class order and free-form run info.

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint32_t { kSegmentation = 1, kClassifier = 2 };

struct CheckpointInfo {
  ModelKind kind = ModelKind::kSegmentation;
  std::uint32_t version = kCheckpointVersion;
  EncoderSpec encoder;
  std::optional<DecoderSpec> decoder;
  std::vector<std::string> class_order;
  std::map<std::string, std::string> metadata;
};

using Metadata = std::map<std::string, std::string>;

/// Writes atomically (temporary file + rename).
void save_checkpoint(const SegNetwork& net, const std::filesystem::path& path, const Metadata& metadata = {});
void save_checkpoint(const Classifier& clf, const std::filesystem::path& path, const Metadata& metadata = {});

/// Throws CheckpointError on I/O failure, corruption, version or kind mismatch,
/// or when the stored tensors do not fit the stored architecture.
SegNetwork load_segmentation_checkpoint(const std::filesystem::path& path);
Classifier load_classifier_checkpoint(const std::filesystem::path& path);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Copies encoder tensors from a checkpoint of either kind into `encoder`;
/// names and shapes must match exactly.
void load_encoder_weights(Encoder& encoder, const std::filesystem::path& path);

}  // namespace recovnet::nn
