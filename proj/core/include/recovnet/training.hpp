// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recovnet/dataset.hpp"
#include "recovnet/losses.hpp"
#include "recovnet/networks.hpp"

namespace recovnet::train {

enum class OptimizerKind { kAdam };

struct TrainConfig {
  int epochs = 15;
  double learning_rate = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  /// Classifier only: keep encoder parameters fixed. Off by default.
  bool freeze_encoder = false;
  /// After the last epoch, replace batch-norm running statistics with the mean
  /// batch moments over the training set under the final weights.
  bool recalibrate_statistics = true;

  /// Phase I: 15 epochs, lr 1e-4, batch 32.
  static TrainConfig segmentation_defaults();
  /// Phase II: 15 epochs, lr 1e-5, batch 64.
  static TrainConfig classifier_defaults();
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double mean_loss = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::map<std::string, std::string> config_echo;
  std::optional<std::filesystem::path> checkpoint;
};

struct SegmentationData {
  Tensor images;  ///< (N, H, W, 3)
  Tensor masks;   ///< (N, H, W, 1), binary
};

struct ClassificationData {
  Tensor images;  ///< (N, H, W, 3)
  std::vector<data::Label> labels;
};

/// Loads images as 3-channel [0,1] tensors (masks binarized at 0.5). A positive
/// `size` resizes everything to size x size; otherwise all images must already agree.
SegmentationData load_segmentation_data(const data::DatasetManifest& manifest, int size = 0);
ClassificationData load_classification_data(const data::DatasetManifest& manifest, int size = 0);

struct RunOptions {
  /// When set, the run writes config.echo, history.csv and model.ckpt here.
  std::optional<std::filesystem::path> run_dir;
  losses::SegmentationLossParams loss;
  /// Extra entries for config.echo and checkpoint metadata.
  std::map<std::string, std::string> extra_echo;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Minimizes the hybrid focal + dice loss over encoder and decoder with Adam.
/// Batches follow a per-epoch permutation seeded by (seed, epoch); the last
/// partial batch is trained.
TrainHistory train_segmentation(nn::SegNetwork& net, const SegmentationData& data,
                                const TrainConfig& cfg, const RunOptions& options = {});
TrainHistory train_segmentation(nn::SegNetwork& net, const data::DatasetManifest& manifest,
                                const TrainConfig& cfg, const RunOptions& options = {});

/// Minimizes categorical cross-entropy over all parameters (encoder included
/// unless cfg.freeze_encoder).
TrainHistory train_classifier(nn::Classifier& clf, const ClassificationData& data,
                              const TrainConfig& cfg, const RunOptions& options = {});
TrainHistory train_classifier(nn::Classifier& clf, const data::DatasetManifest& manifest,
                              const TrainConfig& cfg, const RunOptions& options = {});

/// Sets every batch-norm layer in the chain to the average of its train-mode
/// batch moments over `images`, visited in order in batches of `batch_size`.
void recalibrate_statistics(std::span<nn::Sequential* const> chain, const Tensor& images, int batch_size);

/// config.echo: sorted `key=value` lines.
void write_config_echo(const std::map<std::string, std::string>& echo, const std::filesystem::path& path);
std::map<std::string, std::string> read_config_echo(const std::filesystem::path& path);
/// history.csv: `epoch,mean_loss,seconds`.
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

/// Fraction of correctly predicted labels.
double classification_accuracy(const nn::Classifier& clf, const ClassificationData& data, int batch_size = 32);
/// Mean per-sample dice coefficient of binarized predictions.
double mean_dice(const nn::SegNetwork& net, const SegmentationData& data, double threshold = 0.5, int batch_size = 16);

}  // namespace recovnet::train
