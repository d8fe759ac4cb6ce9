// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "recovnet/image.hpp"
#include "recovnet/networks.hpp"

namespace recovnet::explain {

/// Grad-CAM heatmap aligned with the input image.
struct ActivationMap {
  Image values;  ///< (H, W, 1) in [0, 1]; max is 1 unless the map is all zero
  int class_index = 0;
  std::string target_layer;
  /// Low-resolution map before upsampling and normalization.
  Image raw;
};

/// Name of the encoder's last layer, whose output feeds global average pooling.
std::string default_target_layer(const nn::Classifier& clf);

/// Gradient-weighted class activation map of `class_index` for a single image
/// (1, H, W, C). Channel weights are the spatial means of d(logit)/dA, the map is
/// ReLU(sum_k w_k A_k), bilinearly upsampled to (H, W) and divided by its maximum.
/// An empty `target_layer` selects default_target_layer().
ActivationMap gradcam(const nn::Classifier& clf, const Tensor& image, int class_index,
                      const std::string& target_layer = {});

/// Jet colormap, v in [0, 1] -> RGB in [0, 1].
std::array<double, 3> jet(double v);

/// Grayscale image blended with the jet-colored map; per-pixel heat opacity is
/// 0.4 * map so zero activation leaves the image untouched.
Image render_overlay(const Image& image, const ActivationMap& map);
void overlay(const Image& image, const ActivationMap& map, const std::filesystem::path& output_path);

/// Writes map values as a comma-separated grid, one image row per line.
void write_map_csv(const ActivationMap& map, const std::filesystem::path& path);

}  // namespace recovnet::explain
