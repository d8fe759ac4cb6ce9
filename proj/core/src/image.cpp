// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "recovnet/error.hpp"

namespace recovnet {

Image read_image(const std::filesystem::path& path, ColorMode mode) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  if (raw.empty()) throw IoError("cannot decode image: " + path.string());

  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw IoError("unsupported pixel depth in " + path.string());
  }
  cv::Mat real;
  raw.convertTo(real, CV_64F, scale);

  const int src_channels = real.channels();
  if (src_channels != 1 && src_channels != 3 && src_channels != 4)
    throw IoError("unsupported channel count in " + path.string());

  if (mode == ColorMode::kNative) mode = src_channels == 1 ? ColorMode::kGray : ColorMode::kRgb;
  const int out_channels = mode == ColorMode::kRgb ? 3 : 1;
  Image image(real.rows, real.cols, out_channels);
  for (int y = 0; y < real.rows; ++y) {
    const double* row = real.ptr<double>(y);
    for (int x = 0; x < real.cols; ++x) {
      const double* px = row + static_cast<std::ptrdiff_t>(x) * src_channels;
      if (src_channels == 1) {
        for (int c = 0; c < out_channels; ++c) image.at(y, x, c) = px[0];
      } else if (mode == ColorMode::kRgb) {
        // OpenCV stores BGR(A).
        image.at(y, x, 0) = px[2];
        image.at(y, x, 1) = px[1];
        image.at(y, x, 2) = px[0];
      } else {
        image.at(y, x, 0) = (px[0] + px[1] + px[2]) / 3.0;
      }
    }
  }
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw ValidationError("write_png supports 1 or 3 channels");
  cv::Mat out(image.height, image.width, image.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = out.ptr<unsigned char>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const int dst_c = image.channels == 3 ? 2 - c : c;
        const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
        row[x * image.channels + dst_c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), out);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw IoError("cannot write image: " + path.string());
}

Tensor stack_images(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const Image& first = images.front();
  Tensor batch(Shape{static_cast<std::int64_t>(images.size()), first.height, first.width,
                     first.channels});
  const std::size_t per = first.pixels.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& im = images[i];
    if (im.height != first.height || im.width != first.width || im.channels != first.channels)
      throw ShapeError("stack_images: image " + std::to_string(i) + " has a different shape");
    std::copy(im.pixels.begin(), im.pixels.end(), batch.data() + i * per);
  }
  return batch;
}

Image image_from_batch(const Tensor& batch, std::int64_t n) {
  require_rank4(batch, "image_from_batch");
  Image im(static_cast<int>(batch.dim(1)), static_cast<int>(batch.dim(2)),
           static_cast<int>(batch.dim(3)));
  const std::size_t per = im.pixels.size();
  std::copy(batch.data() + n * per, batch.data() + (n + 1) * per, im.pixels.begin());
  return im;
}

}  // namespace recovnet
