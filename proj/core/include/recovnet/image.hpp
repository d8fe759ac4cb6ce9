// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <vector>

#include "recovnet/tensor.hpp"

namespace recovnet {

/// Interleaved (row, column, channel) intensity grid, values nominally in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  bool empty() const noexcept { return pixels.empty(); }
  double& at(int y, int x, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class ColorMode {
  kRgb,   ///< three channels; grayscale sources are replicated
  kGray,  ///< one channel; color sources are averaged
  kNative,  ///< one or three channels, as stored (alpha dropped)
};

/// Decodes PNG or JPEG (8- or 16-bit, gray or color) and scales to [0,1].
Image read_image(const std::filesystem::path& path, ColorMode mode);

/// Writes an 8-bit PNG (1 or 3 channels); values are clamped to [0,1].
void write_png(const std::filesystem::path& path, const Image& image);

/// Stacks equally-sized images into an NHWC batch.
Tensor stack_images(const std::vector<Image>& images);

/// Extracts sample `n` of an NHWC batch.
Image image_from_batch(const Tensor& batch, std::int64_t n);

}  // namespace recovnet
