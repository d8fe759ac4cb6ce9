// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recovnet/random.hpp"
#include "recovnet/tensor.hpp"

namespace recovnet::nn {

enum class Mode { kTrain, kEval };

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Structural description of a layer: enough to rebuild it (without weights).
struct LayerConfig {
  std::string kind;
  std::string name;
  std::map<std::string, double> attrs;

  double attr(const std::string& key) const;
  friend bool operator==(const LayerConfig&, const LayerConfig&) = default;
};

/// A differentiable stage. Forward is const; parameter gradients are written into
/// caller-owned buffers so a model snapshot can be used from several threads.
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const noexcept { return name_; }
  virtual std::string kind() const = 0;
  virtual LayerConfig config() const { return {kind(), name_, {}}; }
  /// Throws ShapeError for inputs the layer cannot take.
  virtual Shape output_shape(const Shape& input) const = 0;
  /// False when the output has no spatial (H, W) extent.
  virtual bool spatial() const { return true; }

  virtual Tensor forward(const Tensor& input, Mode mode) const = 0;
  /// Gradient w.r.t. `input`. When `param_grads` is non-empty it is aligned with
  /// params() and receives accumulated parameter gradients.
  virtual Tensor backward(const Tensor& input, const Tensor& output, const Tensor& grad_output,
                          Mode mode, std::span<Tensor> param_grads) const = 0;
  /// Training-mode side effects (running statistics).
  virtual void update_statistics(const Tensor& /*input*/) {}
  virtual void initialize(Rng& /*rng*/) {}

  std::vector<NamedTensor>& params() noexcept { return params_; }
  const std::vector<NamedTensor>& params() const noexcept { return params_; }
  std::vector<NamedTensor>& buffers() noexcept { return buffers_; }
  const std::vector<NamedTensor>& buffers() const noexcept { return buffers_; }

  virtual std::unique_ptr<Layer> clone() const = 0;

 protected:
  std::string name_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

/// 2-D convolution, stride 1, zero "same" padding. Kernel layout (k, k, in, out).
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel = 3, bool use_bias = true);
  std::string kind() const override { return "conv2d"; }
  LayerConfig config() const override;
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& input, Mode mode) const override;
  Tensor backward(const Tensor& input, const Tensor& output, const Tensor& grad_output, Mode mode,
                  std::span<Tensor> param_grads) const override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }
  int kernel_size() const noexcept { return k_; }

 private:
  int in_, out_, k_;
  bool use_bias_;
};

/// Per-channel batch normalization over (N, H, W).
class BatchNorm final : public Layer {
 public:
  BatchNorm(std::string name, int channels, double momentum = 0.99, double epsilon = 1e-3);
  std::string kind() const override { return "batchnorm"; }
  LayerConfig config() const override;
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& input, Mode mode) const override;
  Tensor backward(const Tensor& input, const Tensor& output, const Tensor& grad_output, Mode mode,
                  std::span<Tensor> param_grads) const override;
  void update_statistics(const Tensor& input) override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  int channels_;
  double momentum_, epsilon_;
};

class ReLU final : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& input, Mode mode) const override;
  Tensor backward(const Tensor& input, const Tensor& output, const Tensor& grad_output, Mode mode,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
};

class Sigmoid final : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "sigmoid"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& input, Mode mode) const override;
  Tensor backward(const Tensor& input, const Tensor& output, const Tensor& grad_output, Mode mode,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }
};

/// 2x2 max pooling, stride 2. Ties route the gradient to the first maximum.
class MaxPool2 final : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "maxpool2"; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& input, Mode mode) const override;
  Tensor backward(const Tensor& input, const Tensor& output, const Tensor& grad_output, Mode mode,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }
};

/// Nearest-neighbour x2 upsampling.
class Upsample2 final : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "upsample2"; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& input, Mode mode) const override;
  Tensor backward(const Tensor& input, const Tensor& output, const Tensor& grad_output, Mode mode,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample2>(*this); }
};

/// (N, H, W, C) -> (N, C) spatial mean.
class GlobalAvgPool final : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "global_avg_pool"; }
  Shape output_shape(const Shape& input) const override;
  bool spatial() const override { return false; }
  Tensor forward(const Tensor& input, Mode mode) const override;
  Tensor backward(const Tensor& input, const Tensor& output, const Tensor& grad_output, Mode mode,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

/// (N, in) -> (N, out); kernel stored as (out, in).
class Dense final : public Layer {
 public:
  Dense(std::string name, int in_features, int out_features);
  std::string kind() const override { return "dense"; }
  LayerConfig config() const override;
  Shape output_shape(const Shape& input) const override;
  bool spatial() const override { return false; }
  Tensor forward(const Tensor& input, Mode mode) const override;
  Tensor backward(const Tensor& input, const Tensor& output, const Tensor& grad_output, Mode mode,
                  std::span<Tensor> param_grads) const override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  int in_, out_;
};

/// Rebuilds a layer (zero-initialized) from its structural description.
std::unique_ptr<Layer> make_layer(const LayerConfig& config);

/// Activations recorded by a forward pass: activations[0] is the input and
/// activations[i + 1] the output of layer i.
struct Trace {
  std::vector<Tensor> activations;
};

/// Called with each layer's output before it feeds the next layer; may modify it.
using ActivationHook = std::function<void(std::size_t layer_index, Tensor& output)>;

/// Parameter gradients, one vector per layer aligned with Layer::params().
struct Gradients {
  std::vector<std::vector<Tensor>> per_layer;
  void zero();
};

class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  Sequential& add(std::unique_ptr<Layer> layer);
  template <typename L, typename... Args>
  Sequential& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  std::size_t size() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  std::optional<std::size_t> find(const std::string& name) const;

  Shape output_shape(Shape input) const;
  Tensor forward(const Tensor& input, Mode mode, Trace* trace = nullptr,
                 const ActivationHook* hook = nullptr) const;
  void update_statistics(const Trace& trace);
  /// Back-propagates `grad_output` from the last layer down to activation `stop`
  /// and returns the gradient with respect to trace.activations[stop].
  Tensor backward(const Trace& trace, const Tensor& grad_output, Mode mode, Gradients* grads,
                  std::size_t stop = 0) const;

  /// Seeds layer i from Rng(seed, i).
  void initialize(std::uint64_t seed);
  Gradients make_gradients() const;

  /// Trainable tensors, names qualified as "<layer>.<param>".
  std::vector<std::pair<std::string, Tensor*>> parameters();
  /// Parameters plus running statistics, for checkpoints.
  std::vector<std::pair<std::string, Tensor*>> state();
  std::vector<std::pair<std::string, const Tensor*>> state() const;
  std::int64_t parameter_count(bool include_buffers = true) const;

  std::vector<LayerConfig> topology() const;
  static Sequential from_topology(const std::vector<LayerConfig>& configs);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Row-wise softmax of a (batch, classes) tensor.
Tensor softmax(const Tensor& logits);
/// Gradient w.r.t. logits given the gradient w.r.t. softmax(logits).
Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs);

}  // namespace recovnet::nn
