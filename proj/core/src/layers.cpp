// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Core>

#include "recovnet/error.hpp"

namespace recovnet::nn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_nhwc(const Shape& s, const std::string& who) {
  if (s.rank() != 4) throw ShapeError(who + ": expected NHWC input, got " + s.str());
}

void require_channels(const Shape& s, std::int64_t channels, const std::string& who) {
  require_nhwc(s, who);
  if (s[3] != channels)
    throw ShapeError(who + ": expected " + std::to_string(channels) + " channels, got " + s.str());
}

double glorot_limit(double fan_in, double fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

// Rows are output pixels, columns (ky, kx, ci).
void im2col(const double* image, int h, int w, int c, int k, double* cols) {
  const int pad = k / 2;
  const std::size_t row_len = static_cast<std::size_t>(k) * k * c;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* row = cols + (static_cast<std::size_t>(y) * w + x) * row_len;
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - pad;
        for (int kx = 0; kx < k; ++kx) {
          const int sx = x + kx - pad;
          double* dst = row + (static_cast<std::size_t>(ky) * k + kx) * c;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            std::fill(dst, dst + c, 0.0);
          } else {
            std::memcpy(dst, image + (static_cast<std::size_t>(sy) * w + sx) * c, sizeof(double) * c);
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int h, int w, int c, int k, double* image) {
  const int pad = k / 2;
  const std::size_t row_len = static_cast<std::size_t>(k) * k * c;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double* row = cols + (static_cast<std::size_t>(y) * w + x) * row_len;
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int sx = x + kx - pad;
          if (sx < 0 || sx >= w) continue;
          const double* src = row + (static_cast<std::size_t>(ky) * k + kx) * c;
          double* dst = image + (static_cast<std::size_t>(sy) * w + sx) * c;
          for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

}  // namespace

double LayerConfig::attr(const std::string& key) const {
  auto it = attrs.find(key);
  if (it == attrs.end()) throw ValidationError("layer '" + name + "' lacks attribute '" + key + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, bool use_bias)
    : Layer(std::move(name)), in_(in_channels), out_(out_channels), k_(kernel), use_bias_(use_bias) {
  if (in_ <= 0 || out_ <= 0 || k_ <= 0 || k_ % 2 == 0)
    throw ValidationError("conv2d '" + name_ + "': invalid geometry");
  params_.push_back({"kernel", Tensor(Shape{k_, k_, in_, out_})});
  if (use_bias_) params_.push_back({"bias", Tensor(Shape{out_})});
}

LayerConfig Conv2d::config() const {
  return {kind(), name_, {{"in", in_}, {"out", out_}, {"kernel", k_}, {"bias", use_bias_ ? 1.0 : 0.0}}};
}

Shape Conv2d::output_shape(const Shape& input) const {
  require_channels(input, in_, "conv2d '" + name_ + "'");
  return Shape{input[0], input[1], input[2], out_};
}

void Conv2d::initialize(Rng& rng) {
  const double fan_in = static_cast<double>(k_) * k_ * in_;
  const double fan_out = static_cast<double>(k_) * k_ * out_;
  const double limit = glorot_limit(fan_in, fan_out);
  for (double& v : params_[0].value.values()) v = rng.uniform(-limit, limit);
  if (use_bias_) params_[1].value.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& input, Mode) const {
  const Shape out_shape = output_shape(input.shape());
  const int n = static_cast<int>(input.dim(0));
  const int h = static_cast<int>(input.dim(1));
  const int w = static_cast<int>(input.dim(2));
  const std::int64_t pixels = static_cast<std::int64_t>(h) * w;
  const std::int64_t patch = static_cast<std::int64_t>(k_) * k_ * in_;

  Tensor output(out_shape);
  AlignedBuffer cols(static_cast<std::size_t>(pixels * patch));
  ConstMatrixMap weights(params_[0].value.data(), patch, out_);
  for (int b = 0; b < n; ++b) {
    im2col(input.data() + b * pixels * in_, h, w, in_, k_, cols.data());
    MatrixMap out(output.data() + b * pixels * out_, pixels, out_);
    out.noalias() = ConstMatrixMap(cols.data(), pixels, patch) * weights;
    if (use_bias_)
      out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params_[1].value.data(), out_);
  }
  return output;
}

Tensor Conv2d::backward(const Tensor& input, const Tensor&, const Tensor& grad_output, Mode,
                        std::span<Tensor> param_grads) const {
  const int n = static_cast<int>(input.dim(0));
  const int h = static_cast<int>(input.dim(1));
  const int w = static_cast<int>(input.dim(2));
  const std::int64_t pixels = static_cast<std::int64_t>(h) * w;
  const std::int64_t patch = static_cast<std::int64_t>(k_) * k_ * in_;
  require_same_shape(grad_output.shape(), output_shape(input.shape()), "conv2d backward");

  Tensor grad_input(input.shape());
  AlignedBuffer cols(static_cast<std::size_t>(pixels * patch));
  AlignedBuffer grad_cols(cols.size());
  ConstMatrixMap weights(params_[0].value.data(), patch, out_);
  const bool want_params = !param_grads.empty();
  for (int b = 0; b < n; ++b) {
    ConstMatrixMap g(grad_output.data() + b * pixels * out_, pixels, out_);
    if (want_params) {
      im2col(input.data() + b * pixels * in_, h, w, in_, k_, cols.data());
      MatrixMap dk(param_grads[0].data(), patch, out_);
      dk.noalias() += ConstMatrixMap(cols.data(), pixels, patch).transpose() * g;
      if (use_bias_)
        Eigen::Map<Eigen::RowVectorXd>(param_grads[1].data(), out_) += g.colwise().sum();
    }
    MatrixMap(grad_cols.data(), pixels, patch).noalias() = g * weights.transpose();
    col2im(grad_cols.data(), h, w, in_, k_, grad_input.data() + b * pixels * in_);
  }
  return grad_input;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, double momentum, double epsilon)
    : Layer(std::move(name)), channels_(channels), momentum_(momentum), epsilon_(epsilon) {
  if (channels_ <= 0) throw ValidationError("batchnorm '" + name_ + "': invalid channel count");
  params_.push_back({"gamma", Tensor(Shape{channels_}, 1.0)});
  params_.push_back({"beta", Tensor(Shape{channels_}, 0.0)});
  buffers_.push_back({"moving_mean", Tensor(Shape{channels_}, 0.0)});
  buffers_.push_back({"moving_variance", Tensor(Shape{channels_}, 1.0)});
}

LayerConfig BatchNorm::config() const {
  return {kind(), name_, {{"channels", channels_}, {"momentum", momentum_}, {"epsilon", epsilon_}}};
}

Shape BatchNorm::output_shape(const Shape& input) const {
  require_channels(input, channels_, "batchnorm '" + name_ + "'");
  return input;
}

void BatchNorm::initialize(Rng&) {
  params_[0].value.fill(1.0);
  params_[1].value.fill(0.0);
  buffers_[0].value.fill(0.0);
  buffers_[1].value.fill(1.0);
}

namespace {

struct ChannelMoments {
  std::vector<double> mean, var;
};

ChannelMoments channel_moments(const Tensor& x, int channels) {
  const std::size_t m = x.size() / static_cast<std::size_t>(channels);
  ChannelMoments out{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0)};
  for (std::size_t i = 0; i < x.size(); ++i) out.mean[i % channels] += x[i];
  for (double& v : out.mean) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - out.mean[i % channels];
    out.var[i % channels] += d * d;
  }
  for (double& v : out.var) v /= static_cast<double>(m);
  return out;
}

}  // namespace

Tensor BatchNorm::forward(const Tensor& input, Mode mode) const {
  output_shape(input.shape());
  const auto& gamma = params_[0].value;
  const auto& beta = params_[1].value;
  std::vector<double> mean, var;
  if (mode == Mode::kTrain) {
    auto m = channel_moments(input, channels_);
    mean = std::move(m.mean);
    var = std::move(m.var);
  } else {
    mean.assign(buffers_[0].value.data(), buffers_[0].value.data() + channels_);
    var.assign(buffers_[1].value.data(), buffers_[1].value.data() + channels_);
  }
  std::vector<double> scale(channels_), shift(channels_);
  for (int c = 0; c < channels_; ++c) {
    scale[c] = gamma[c] / std::sqrt(var[c] + epsilon_);
    shift[c] = beta[c] - mean[c] * scale[c];
  }
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const std::size_t c = i % channels_;
    out[i] = input[i] * scale[c] + shift[c];
  }
  return out;
}

Tensor BatchNorm::backward(const Tensor& input, const Tensor&, const Tensor& grad_output, Mode mode,
                           std::span<Tensor> param_grads) const {
  require_same_shape(grad_output.shape(), input.shape(), "batchnorm backward");
  const auto& gamma = params_[0].value;
  std::vector<double> mean, var;
  if (mode == Mode::kTrain) {
    auto m = channel_moments(input, channels_);
    mean = std::move(m.mean);
    var = std::move(m.var);
  } else {
    mean.assign(buffers_[0].value.data(), buffers_[0].value.data() + channels_);
    var.assign(buffers_[1].value.data(), buffers_[1].value.data() + channels_);
  }
  std::vector<double> inv_std(channels_);
  for (int c = 0; c < channels_; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon_);

  std::vector<double> sum_g(channels_, 0.0), sum_g_xhat(channels_, 0.0);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const std::size_t c = i % channels_;
    const double xhat = (input[i] - mean[c]) * inv_std[c];
    sum_g[c] += grad_output[i];
    sum_g_xhat[c] += grad_output[i] * xhat;
  }
  if (!param_grads.empty()) {
    for (int c = 0; c < channels_; ++c) {
      param_grads[0][c] += sum_g_xhat[c];
      param_grads[1][c] += sum_g[c];
    }
  }

  Tensor grad_input(input.shape());
  if (mode == Mode::kEval) {
    for (std::size_t i = 0; i < input.size(); ++i) {
      const std::size_t c = i % channels_;
      grad_input[i] = grad_output[i] * gamma[c] * inv_std[c];
    }
    return grad_input;
  }
  const double m = static_cast<double>(input.size() / static_cast<std::size_t>(channels_));
  for (std::size_t i = 0; i < input.size(); ++i) {
    const std::size_t c = i % channels_;
    const double xhat = (input[i] - mean[c]) * inv_std[c];
    grad_input[i] = gamma[c] * inv_std[c] *
                    (grad_output[i] - sum_g[c] / m - xhat * sum_g_xhat[c] / m);
  }
  return grad_input;
}

void BatchNorm::update_statistics(const Tensor& input) {
  const auto m = channel_moments(input, channels_);
  auto& mean = buffers_[0].value;
  auto& var = buffers_[1].value;
  for (int c = 0; c < channels_; ++c) {
    mean[c] = momentum_ * mean[c] + (1.0 - momentum_) * m.mean[c];
    var[c] = momentum_ * var[c] + (1.0 - momentum_) * m.var[c];
  }
}

// ---------------------------------------------------------------------------
// Pointwise activations

Tensor ReLU::forward(const Tensor& input, Mode) const {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor ReLU::backward(const Tensor& input, const Tensor&, const Tensor& grad_output, Mode,
                      std::span<Tensor>) const {
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > 0.0 ? grad_output[i] : 0.0;
  return g;
}

Tensor Sigmoid::forward(const Tensor& input, Mode) const {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double x = input[i];
    // Split by sign so exp never overflows.
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

Tensor Sigmoid::backward(const Tensor&, const Tensor& output, const Tensor& grad_output, Mode,
                         std::span<Tensor>) const {
  Tensor g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i)
    g[i] = grad_output[i] * output[i] * (1.0 - output[i]);
  return g;
}

// ---------------------------------------------------------------------------
// Resampling

Shape MaxPool2::output_shape(const Shape& input) const {
  require_nhwc(input, "maxpool2 '" + name_ + "'");
  if (input[1] % 2 != 0 || input[2] % 2 != 0)
    throw ShapeError("maxpool2 '" + name_ + "': spatial dims must be even, got " + input.str());
  return Shape{input[0], input[1] / 2, input[2] / 2, input[3]};
}

Tensor MaxPool2::forward(const Tensor& input, Mode) const {
  Tensor out(output_shape(input.shape()));
  const auto oh = out.dim(1), ow = out.dim(2), c = out.dim(3);
  for (std::int64_t n = 0; n < out.dim(0); ++n)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x)
        for (std::int64_t ch = 0; ch < c; ++ch)
          out.at(n, y, x, ch) = std::max({input.at(n, 2 * y, 2 * x, ch), input.at(n, 2 * y, 2 * x + 1, ch),
                                          input.at(n, 2 * y + 1, 2 * x, ch),
                                          input.at(n, 2 * y + 1, 2 * x + 1, ch)});
  return out;
}

Tensor MaxPool2::backward(const Tensor& input, const Tensor& output, const Tensor& grad_output, Mode,
                          std::span<Tensor>) const {
  Tensor g(input.shape());
  const auto oh = output.dim(1), ow = output.dim(2), c = output.dim(3);
  for (std::int64_t n = 0; n < output.dim(0); ++n)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double m = output.at(n, y, x, ch);
          bool routed = false;
          for (int dy = 0; dy < 2 && !routed; ++dy)
            for (int dx = 0; dx < 2 && !routed; ++dx)
              if (input.at(n, 2 * y + dy, 2 * x + dx, ch) == m) {
                g.at(n, 2 * y + dy, 2 * x + dx, ch) = grad_output.at(n, y, x, ch);
                routed = true;
              }
        }
  return g;
}

Shape Upsample2::output_shape(const Shape& input) const {
  require_nhwc(input, "upsample2 '" + name_ + "'");
  return Shape{input[0], input[1] * 2, input[2] * 2, input[3]};
}

Tensor Upsample2::forward(const Tensor& input, Mode) const {
  Tensor out(output_shape(input.shape()));
  const auto h = out.dim(1), w = out.dim(2), c = out.dim(3);
  for (std::int64_t n = 0; n < out.dim(0); ++n)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t ch = 0; ch < c; ++ch) out.at(n, y, x, ch) = input.at(n, y / 2, x / 2, ch);
  return out;
}

Tensor Upsample2::backward(const Tensor& input, const Tensor&, const Tensor& grad_output, Mode,
                           std::span<Tensor>) const {
  Tensor g(input.shape());
  const auto h = grad_output.dim(1), w = grad_output.dim(2), c = grad_output.dim(3);
  for (std::int64_t n = 0; n < grad_output.dim(0); ++n)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t ch = 0; ch < c; ++ch) g.at(n, y / 2, x / 2, ch) += grad_output.at(n, y, x, ch);
  return g;
}

Shape GlobalAvgPool::output_shape(const Shape& input) const {
  require_nhwc(input, "global_avg_pool '" + name_ + "'");
  return Shape{input[0], input[3]};
}

Tensor GlobalAvgPool::forward(const Tensor& input, Mode) const {
  Tensor out(output_shape(input.shape()));
  const auto n = input.dim(0), c = input.dim(3);
  const std::int64_t pixels = input.dim(1) * input.dim(2);
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t p = 0; p < pixels; ++p)
      for (std::int64_t ch = 0; ch < c; ++ch)
        out[static_cast<std::size_t>(b * c + ch)] += input[static_cast<std::size_t>((b * pixels + p) * c + ch)];
    for (std::int64_t ch = 0; ch < c; ++ch) out[static_cast<std::size_t>(b * c + ch)] /= static_cast<double>(pixels);
  }
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& input, const Tensor&, const Tensor& grad_output, Mode,
                               std::span<Tensor>) const {
  Tensor g(input.shape());
  const auto n = input.dim(0), c = input.dim(3);
  const std::int64_t pixels = input.dim(1) * input.dim(2);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t p = 0; p < pixels; ++p)
      for (std::int64_t ch = 0; ch < c; ++ch)
        g[static_cast<std::size_t>((b * pixels + p) * c + ch)] =
            grad_output[static_cast<std::size_t>(b * c + ch)] / static_cast<double>(pixels);
  return g;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::string name, int in_features, int out_features)
    : Layer(std::move(name)), in_(in_features), out_(out_features) {
  if (in_ <= 0 || out_ <= 0) throw ValidationError("dense '" + name_ + "': invalid geometry");
  params_.push_back({"kernel", Tensor(Shape{out_, in_})});
  params_.push_back({"bias", Tensor(Shape{out_})});
}

LayerConfig Dense::config() const { return {kind(), name_, {{"in", in_}, {"out", out_}}}; }

Shape Dense::output_shape(const Shape& input) const {
  if (input.rank() != 2 || input[1] != in_)
    throw ShapeError("dense '" + name_ + "': expected (N, " + std::to_string(in_) + "), got " + input.str());
  return Shape{input[0], out_};
}

void Dense::initialize(Rng& rng) {
  const double limit = glorot_limit(in_, out_);
  for (double& v : params_[0].value.values()) v = rng.uniform(-limit, limit);
  params_[1].value.fill(0.0);
}

Tensor Dense::forward(const Tensor& input, Mode) const {
  Tensor out(output_shape(input.shape()));
  const auto n = input.dim(0);
  MatrixMap(out.data(), n, out_).noalias() =
      ConstMatrixMap(input.data(), n, in_) * ConstMatrixMap(params_[0].value.data(), out_, in_).transpose();
  MatrixMap(out.data(), n, out_).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params_[1].value.data(), out_);
  return out;
}

Tensor Dense::backward(const Tensor& input, const Tensor&, const Tensor& grad_output, Mode,
                       std::span<Tensor> param_grads) const {
  const auto n = input.dim(0);
  ConstMatrixMap g(grad_output.data(), n, out_);
  ConstMatrixMap x(input.data(), n, in_);
  if (!param_grads.empty()) {
    MatrixMap(param_grads[0].data(), out_, in_).noalias() += g.transpose() * x;
    Eigen::Map<Eigen::RowVectorXd>(param_grads[1].data(), out_) += g.colwise().sum();
  }
  Tensor grad_input(input.shape());
  MatrixMap(grad_input.data(), n, in_).noalias() = g * ConstMatrixMap(params_[0].value.data(), out_, in_);
  return grad_input;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Layer> make_layer(const LayerConfig& c) {
  auto as_int = [&](const char* key) { return static_cast<int>(c.attr(key)); };
  if (c.kind == "conv2d") return std::make_unique<Conv2d>(c.name, as_int("in"), as_int("out"), as_int("kernel"), c.attr("bias") != 0.0);
  if (c.kind == "batchnorm") return std::make_unique<BatchNorm>(c.name, as_int("channels"), c.attr("momentum"), c.attr("epsilon"));
  if (c.kind == "relu") return std::make_unique<ReLU>(c.name);
  if (c.kind == "sigmoid") return std::make_unique<Sigmoid>(c.name);
  if (c.kind == "maxpool2") return std::make_unique<MaxPool2>(c.name);
  if (c.kind == "upsample2") return std::make_unique<Upsample2>(c.name);
  if (c.kind == "global_avg_pool") return std::make_unique<GlobalAvgPool>(c.name);
  if (c.kind == "dense") return std::make_unique<Dense>(c.name, as_int("in"), as_int("out"));
  throw ValidationError("unknown layer kind '" + c.kind + "'");
}

void Gradients::zero() {
  for (auto& layer : per_layer)
    for (auto& g : layer) g.fill(0.0);
}

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
  if (find(layer->name())) throw ValidationError("duplicate layer name '" + layer->name() + "'");
  layers_.push_back(std::move(layer));
  return *this;
}

std::optional<std::size_t> Sequential::find(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i]->name() == name) return i;
  return std::nullopt;
}

Shape Sequential::output_shape(Shape input) const {
  for (const auto& l : layers_) input = l->output_shape(input);
  return input;
}

Tensor Sequential::forward(const Tensor& input, Mode mode, Trace* trace,
                           const ActivationHook* hook) const {
  if (trace) {
    trace->activations.clear();
    trace->activations.reserve(layers_.size() + 1);
    trace->activations.push_back(input);
  }
  Tensor x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i]->forward(x, mode);
    if (hook && *hook) (*hook)(i, x);
    if (trace) trace->activations.push_back(x);
  }
  return x;
}

void Sequential::update_statistics(const Trace& trace) {
  if (trace.activations.size() != layers_.size() + 1)
    throw ValidationError("update_statistics: trace does not match network");
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->update_statistics(trace.activations[i]);
}

Tensor Sequential::backward(const Trace& trace, const Tensor& grad_output, Mode mode,
                            Gradients* grads, std::size_t stop) const {
  if (trace.activations.size() != layers_.size() + 1)
    throw ValidationError("backward: trace does not match network");
  if (stop > layers_.size()) throw ValidationError("backward: stop index out of range");
  Tensor g = grad_output;
  for (std::size_t i = layers_.size(); i-- > stop;) {
    std::span<Tensor> pg;
    if (grads) pg = grads->per_layer.at(i);
    g = layers_[i]->backward(trace.activations[i], trace.activations[i + 1], g, mode, pg);
  }
  return g;
}

void Sequential::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Rng rng(seed, i);
    layers_[i]->initialize(rng);
  }
}

Gradients Sequential::make_gradients() const {
  Gradients g;
  g.per_layer.reserve(layers_.size());
  for (const auto& l : layers_) {
    std::vector<Tensor> per;
    for (const auto& p : l->params()) per.emplace_back(p.value.shape());
    g.per_layer.push_back(std::move(per));
  }
  return g;
}

std::vector<std::pair<std::string, Tensor*>> Sequential::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& l : layers_)
    for (auto& p : l->params()) out.emplace_back(l->name() + "." + p.name, &p.value);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Sequential::state() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& l : layers_) {
    for (auto& p : l->params()) out.emplace_back(l->name() + "." + p.name, &p.value);
    for (auto& b : l->buffers()) out.emplace_back(l->name() + "." + b.name, &b.value);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Sequential::state() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& l : layers_) {
    for (const auto& p : l->params()) out.emplace_back(l->name() + "." + p.name, &p.value);
    for (const auto& b : l->buffers()) out.emplace_back(l->name() + "." + b.name, &b.value);
  }
  return out;
}

std::int64_t Sequential::parameter_count(bool include_buffers) const {
  std::int64_t count = 0;
  for (const auto& l : layers_) {
    for (const auto& p : l->params()) count += static_cast<std::int64_t>(p.value.size());
    if (include_buffers)
      for (const auto& b : l->buffers()) count += static_cast<std::int64_t>(b.value.size());
  }
  return count;
}

std::vector<LayerConfig> Sequential::topology() const {
  std::vector<LayerConfig> out;
  for (const auto& l : layers_) out.push_back(l->config());
  return out;
}

Sequential Sequential::from_topology(const std::vector<LayerConfig>& configs) {
  Sequential s;
  for (const auto& c : configs) s.add(make_layer(c));
  return s;
}

Tensor softmax(const Tensor& logits) {
  if (logits.shape().rank() != 2) throw ShapeError("softmax: expected (batch, classes)");
  const auto n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::int64_t b = 0; b < n; ++b) {
    const double* z = logits.data() + b * k;
    double* p = out.data() + b * k;
    const double m = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::int64_t c = 0; c < k; ++c) sum += (p[c] = std::exp(z[c] - m));
    for (std::int64_t c = 0; c < k; ++c) p[c] /= sum;
  }
  return out;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
  require_same_shape(probs.shape(), grad_probs.shape(), "softmax_backward");
  const auto n = probs.dim(0), k = probs.dim(1);
  Tensor g(probs.shape());
  for (std::int64_t b = 0; b < n; ++b) {
    const double* p = probs.data() + b * k;
    const double* gp = grad_probs.data() + b * k;
    double dot = 0.0;
    for (std::int64_t c = 0; c < k; ++c) dot += gp[c] * p[c];
    for (std::int64_t c = 0; c < k; ++c) g[static_cast<std::size_t>(b * k + c)] = p[c] * (gp[c] - dot);
  }
  return g;
}

}  // namespace recovnet::nn
