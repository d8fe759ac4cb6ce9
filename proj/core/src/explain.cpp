// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "recovnet/error.hpp"

namespace recovnet::explain {

namespace {
constexpr double kHeatOpacity = 0.4;
}

std::string default_target_layer(const nn::Classifier& clf) {
  const auto& layers = clf.encoder().layers;
  if (layers.size() == 0) throw ValidationError("classifier encoder has no layers");
  return layers.layer(layers.size() - 1).name();
}

ActivationMap gradcam(const nn::Classifier& clf, const Tensor& image, int class_index,
                      const std::string& target_layer) {
  require_rank4(image, "gradcam");
  if (image.dim(0) != 1) throw ShapeError("gradcam: expects a single image, got " + image.shape().str());
  if (class_index < 0 || class_index >= nn::kNumClasses)
    throw ValidationError("gradcam: class index " + std::to_string(class_index) + " is not 0 or 1");

  const std::string target = target_layer.empty() ? default_target_layer(clf) : target_layer;
  const auto& encoder = clf.encoder().layers;
  const auto index = encoder.find(target);
  if (!index) {
    if (clf.head().find(target))
      throw NonSpatialLayerError("gradcam: layer '" + target + "' has no spatial feature map");
    throw ValidationError("gradcam: unknown layer '" + target + "'");
  }
  if (!encoder.layer(*index).spatial())
    throw NonSpatialLayerError("gradcam: layer '" + target + "' has no spatial feature map");

  nn::ClassifierPass pass;
  const Tensor logits = clf.logits(image, nn::Mode::kEval, &pass);
  Tensor seed(logits.shape());
  seed[static_cast<std::size_t>(class_index)] = 1.0;
  const Tensor grad_features = clf.head().backward(pass.head, seed, nn::Mode::kEval, nullptr);
  const Tensor grad = encoder.backward(pass.encoder, grad_features, nn::Mode::kEval, nullptr, *index + 1);
  const Tensor& act = pass.encoder.activations[*index + 1];
  if (act.shape().rank() != 4)
    throw NonSpatialLayerError("gradcam: layer '" + target + "' has no spatial feature map");

  const int h = static_cast<int>(act.dim(1));
  const int w = static_cast<int>(act.dim(2));
  const int c = static_cast<int>(act.dim(3));
  std::vector<double> weights(c, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) weights[k] += grad.at(0, y, x, k);
  for (double& wk : weights) wk /= static_cast<double>(h) * w;

  ActivationMap map;
  map.class_index = class_index;
  map.target_layer = target;
  map.raw = Image(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = 0; k < c; ++k) s += weights[k] * act.at(0, y, x, k);
      map.raw.at(y, x) = std::max(0.0, s);
    }

  map.values = data::resize_image(map.raw, static_cast<int>(image.dim(1)), static_cast<int>(image.dim(2)));
  const double peak = *std::max_element(map.values.pixels.begin(), map.values.pixels.end());
  if (peak > 0.0)
    for (double& v : map.values.pixels) v /= peak;
  return map;
}

std::array<double, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto channel = [v](double center) { return std::clamp(1.5 - std::abs(4.0 * v - center), 0.0, 1.0); };
  return {channel(3.0), channel(2.0), channel(1.0)};
}

Image render_overlay(const Image& image, const ActivationMap& map) {
  if (image.height != map.values.height || image.width != map.values.width)
    throw ShapeError("overlay: image and map sizes differ");
  Image out(image.height, image.width, 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      double gray = 0.0;
      for (int c = 0; c < image.channels; ++c) gray += image.at(y, x, c);
      gray /= image.channels;
      const double m = std::clamp(map.values.at(y, x), 0.0, 1.0);
      const double alpha = kHeatOpacity * m;
      const auto heat = jet(m);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = (1.0 - alpha) * gray + alpha * heat[c];
    }
  return out;
}

void overlay(const Image& image, const ActivationMap& map, const std::filesystem::path& output_path) {
  write_png(output_path, render_overlay(image, map));
}

void write_map_csv(const ActivationMap& map, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[32];
  for (int y = 0; y < map.values.height; ++y) {
    for (int x = 0; x < map.values.width; ++x) {
      std::snprintf(buf, sizeof(buf), "%.9g", map.values.at(y, x));
      out << (x ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace recovnet::explain
