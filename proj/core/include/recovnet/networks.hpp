// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "recovnet/dataset.hpp"
#include "recovnet/layers.hpp"

namespace recovnet::nn {

enum class EncoderInit { kRandom, kPretrainedCheckpoint };

/// Describes a feature extractor mapping (N, H, W, in) to (N, H/d, W/d, C).
struct EncoderSpec {
  std::string name = "reference";
  int downsample_factor = 32;
  int output_channels = 256;
  int input_channels = 3;
  EncoderInit init = EncoderInit::kRandom;
  std::uint64_t seed = 0;
  /// Source of the weights when init == kPretrainedCheckpoint.
  std::filesystem::path checkpoint;

  void validate() const;
  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

/// The lung-mask decoder. Everything except the seed is fixed; validate() rejects
/// any other architecture.
struct DecoderSpec {
  int stages = 5;
  std::vector<int> stage_filters{256, 128, 64, 32, 16};
  int final_filters = 1;
  int kernel = 3;
  std::uint64_t seed = 1;

  void validate(int encoder_downsample) const;
  friend bool operator==(const DecoderSpec&, const DecoderSpec&) = default;
};

struct Encoder {
  EncoderSpec spec;
  Sequential layers;

  /// Throws ShapeError unless H and W are divisible by the downsample factor.
  void check_input(const Shape& input) const;
  Tensor forward(const Tensor& batch, Mode mode, Trace* trace = nullptr,
                 const ActivationHook* hook = nullptr) const;
};

struct Decoder {
  DecoderSpec spec;
  int input_channels = 0;
  Sequential layers;

  Tensor forward(const Tensor& features, Mode mode, Trace* trace = nullptr) const;
};

using EncoderBuilder = std::function<Sequential(const EncoderSpec&)>;

/// Makes a backbone available to build_encoder under `name`.
void register_encoder(const std::string& name, EncoderBuilder builder);
std::vector<std::string> registered_encoders();

/// The built-in "reference" backbone: five (conv3x3, BN, ReLU, maxpool x2) blocks
/// with channels 16, 32, 64, 128, 256.
Sequential reference_encoder_layers(const EncoderSpec& spec);

Encoder build_encoder(const EncoderSpec& spec);
Decoder build_decoder(const DecoderSpec& spec, int input_channels);

/// Intermediate state of a segmentation pass.
struct SegPass {
  Trace encoder;
  Trace decoder;
};

/// Encoder followed directly by the decoder; only the final feature map reaches
/// the decoder.
class SegNetwork {
 public:
  SegNetwork(Encoder encoder, Decoder decoder);
  static SegNetwork build(const EncoderSpec& encoder, const DecoderSpec& decoder = {});

  /// (N, H, W, C) -> (N, H, W, 1) in (0, 1).
  Tensor forward(const Tensor& batch, Mode mode = Mode::kEval, SegPass* pass = nullptr,
                 const ActivationHook* encoder_hook = nullptr) const;

  Encoder& encoder() noexcept { return encoder_; }
  const Encoder& encoder() const noexcept { return encoder_; }
  Decoder& decoder() noexcept { return decoder_; }
  const Decoder& decoder() const noexcept { return decoder_; }

 private:
  Encoder encoder_;
  Decoder decoder_;
};

/// Inference-mode segmentation.
Tensor seg_forward(const SegNetwork& net, const Tensor& batch);

/// pred >= threshold -> 1, else 0.
Tensor binarize_mask(const Tensor& pred, double threshold);

/// Deep copy of the encoder; the decoder is dropped.
Encoder detach_encoder(const SegNetwork& net);

inline constexpr int kNumClasses = 2;

struct ClassifierPass {
  Trace encoder;
  Trace head;
};

/// Encoder -> global average pool -> dense(2) -> softmax.
class Classifier {
 public:
  Classifier(Encoder encoder, Sequential head);

  Tensor logits(const Tensor& batch, Mode mode = Mode::kEval, ClassifierPass* pass = nullptr) const;
  /// (N, 2) class probabilities in (control, covid) order.
  Tensor classify(const Tensor& batch) const;

  Encoder& encoder() noexcept { return encoder_; }
  const Encoder& encoder() const noexcept { return encoder_; }
  Sequential& head() noexcept { return head_; }
  const Sequential& head() const noexcept { return head_; }
  Dense& fc();
  const Dense& fc() const;

 private:
  Encoder encoder_;
  Sequential head_;
};

/// Attaches a freshly initialized head; encoder parameters are left as given.
Classifier build_classifier(Encoder encoder, std::uint64_t head_seed);

/// Argmax per row; an exact tie resolves to control.
std::vector<data::Label> predict_label(const Tensor& probs);

/// One-hot (N, 2) targets in class-index order.
Tensor one_hot(const std::vector<data::Label>& labels);

}  // namespace recovnet::nn
