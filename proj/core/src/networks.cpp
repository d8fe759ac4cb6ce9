// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/networks.hpp"

#include <map>
#include <mutex>

#include "recovnet/checkpoint.hpp"
#include "recovnet/error.hpp"

namespace recovnet::nn {
namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, EncoderBuilder> builders{{"reference", reference_encoder_layers}};
};

Registry& registry() {
  static Registry r;
  return r;
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void EncoderSpec::validate() const {
  if (name.empty()) throw ValidationError("encoder spec: empty name");
  if (!is_power_of_two(downsample_factor))
    throw ValidationError("encoder spec: downsample_factor must be a power of two");
  if (output_channels <= 0 || input_channels <= 0)
    throw ValidationError("encoder spec: channel counts must be positive");
  if (init == EncoderInit::kPretrainedCheckpoint && checkpoint.empty())
    throw ValidationError("encoder spec: pretrained init requires a checkpoint path");
}

void DecoderSpec::validate(int encoder_downsample) const {
  const DecoderSpec fixed;
  if (stages != fixed.stages || stage_filters != fixed.stage_filters ||
      final_filters != fixed.final_filters || kernel != fixed.kernel)
    throw ValidationError(
        "decoder spec: architecture is fixed to 5 stages of [256,128,64,32,16] filters, "
        "a 1-filter output conv and 3x3 kernels");
  if ((1 << stages) != encoder_downsample)
    throw ValidationError("decoder spec: 2^stages (" + std::to_string(1 << stages) +
                          ") must equal the encoder downsample factor (" +
                          std::to_string(encoder_downsample) + ")");
}

void Encoder::check_input(const Shape& input) const {
  if (input.rank() != 4) throw ShapeError("encoder: expected NHWC batch, got " + input.str());
  const int d = spec.downsample_factor;
  if (input[1] % d != 0 || input[2] % d != 0 || input[1] == 0 || input[2] == 0)
    throw ShapeError("encoder '" + spec.name + "': input " + std::to_string(input[1]) + "x" +
                     std::to_string(input[2]) + " is not divisible by " + std::to_string(d));
}

Tensor Encoder::forward(const Tensor& batch, Mode mode, Trace* trace, const ActivationHook* hook) const {
  check_input(batch.shape());
  return layers.forward(batch, mode, trace, hook);
}

Tensor Decoder::forward(const Tensor& features, Mode mode, Trace* trace) const {
  return layers.forward(features, mode, trace);
}

void register_encoder(const std::string& name, EncoderBuilder builder) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.builders[name] = std::move(builder);
}

std::vector<std::string> registered_encoders() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, _] : r.builders) names.push_back(name);
  return names;
}

Sequential reference_encoder_layers(const EncoderSpec& spec) {
  if (spec.downsample_factor != 32 || spec.output_channels != 256)
    throw ValidationError("reference encoder has downsample 32 and 256 output channels");
  constexpr int kChannels[] = {16, 32, 64, 128, 256};
  Sequential s;
  int in = spec.input_channels;
  for (int b = 0; b < 5; ++b) {
    const std::string block = "block" + std::to_string(b + 1);
    s.emplace<Conv2d>(block + ".conv", in, kChannels[b], 3);
    s.emplace<BatchNorm>(block + ".bn", kChannels[b]);
    s.emplace<ReLU>(block + ".relu");
    s.emplace<MaxPool2>(block + ".pool");
    in = kChannels[b];
  }
  return s;
}

Encoder build_encoder(const EncoderSpec& spec) {
  spec.validate();
  EncoderBuilder builder;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.builders.find(spec.name);
    if (it == r.builders.end()) throw ValidationError("unknown encoder '" + spec.name + "'");
    builder = it->second;
  }
  Encoder enc{spec, builder(spec)};
  const int probe = spec.downsample_factor;
  const Shape out = enc.layers.output_shape(Shape{1, probe, probe, spec.input_channels});
  if (out.rank() != 4 || out[1] != 1 || out[2] != 1 || out[3] != spec.output_channels)
    throw ValidationError("encoder '" + spec.name + "' does not match its spec (got output " +
                          out.str() + " for a " + std::to_string(probe) + "px probe)");
  enc.layers.initialize(spec.seed);
  if (spec.init == EncoderInit::kPretrainedCheckpoint) load_encoder_weights(enc, spec.checkpoint);
  return enc;
}

Decoder build_decoder(const DecoderSpec& spec, int input_channels) {
  spec.validate(1 << spec.stages);
  if (input_channels <= 0) throw ValidationError("decoder: input channels must be positive");
  Decoder dec{spec, input_channels, {}};
  int in = input_channels;
  for (int s = 0; s < spec.stages; ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    const int f = spec.stage_filters[static_cast<std::size_t>(s)];
    dec.layers.emplace<Upsample2>(stage + ".up");
    for (int rep = 1; rep <= 2; ++rep) {
      const std::string r = std::to_string(rep);
      dec.layers.emplace<Conv2d>(stage + ".conv" + r, in, f, spec.kernel);
      dec.layers.emplace<BatchNorm>(stage + ".bn" + r, f);
      dec.layers.emplace<ReLU>(stage + ".relu" + r);
      in = f;
    }
  }
  dec.layers.emplace<Conv2d>("head.conv", in, spec.final_filters, spec.kernel);
  dec.layers.emplace<Sigmoid>("head.sigmoid");
  dec.layers.initialize(spec.seed);
  return dec;
}

SegNetwork::SegNetwork(Encoder encoder, Decoder decoder)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  decoder_.spec.validate(encoder_.spec.downsample_factor);
  if (decoder_.input_channels != encoder_.spec.output_channels)
    throw ValidationError("decoder expects " + std::to_string(decoder_.input_channels) +
                          " channels but the encoder produces " +
                          std::to_string(encoder_.spec.output_channels));
}

SegNetwork SegNetwork::build(const EncoderSpec& encoder, const DecoderSpec& decoder) {
  decoder.validate(encoder.downsample_factor);
  return SegNetwork(build_encoder(encoder), build_decoder(decoder, encoder.output_channels));
}

Tensor SegNetwork::forward(const Tensor& batch, Mode mode, SegPass* pass,
                           const ActivationHook* encoder_hook) const {
  Tensor features = encoder_.forward(batch, mode, pass ? &pass->encoder : nullptr, encoder_hook);
  return decoder_.forward(features, mode, pass ? &pass->decoder : nullptr);
}

Tensor seg_forward(const SegNetwork& net, const Tensor& batch) { return net.forward(batch, Mode::kEval); }

Tensor binarize_mask(const Tensor& pred, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("binarize_mask: threshold must lie in (0, 1)");
  Tensor out(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] >= threshold ? 1.0 : 0.0;
  return out;
}

Encoder detach_encoder(const SegNetwork& net) { return net.encoder(); }

Classifier::Classifier(Encoder encoder, Sequential head) : encoder_(std::move(encoder)), head_(std::move(head)) {
  const Shape out = head_.output_shape(Shape{1, 1, 1, encoder_.spec.output_channels});
  if (out != Shape{1, kNumClasses}) throw ValidationError("classifier head must produce 2 logits");
  if (!head_.find("fc")) throw ValidationError("classifier head lacks an 'fc' layer");
}

Tensor Classifier::logits(const Tensor& batch, Mode mode, ClassifierPass* pass) const {
  Tensor features = encoder_.forward(batch, mode, pass ? &pass->encoder : nullptr);
  return head_.forward(features, mode, pass ? &pass->head : nullptr);
}

Tensor Classifier::classify(const Tensor& batch) const { return softmax(logits(batch, Mode::kEval)); }

Dense& Classifier::fc() { return static_cast<Dense&>(head_.layer(*head_.find("fc"))); }
const Dense& Classifier::fc() const { return static_cast<const Dense&>(head_.layer(*head_.find("fc"))); }

Classifier build_classifier(Encoder encoder, std::uint64_t head_seed) {
  Sequential head;
  head.emplace<GlobalAvgPool>("gap");
  head.emplace<Dense>("fc", encoder.spec.output_channels, kNumClasses);
  head.initialize(head_seed);
  return Classifier(std::move(encoder), std::move(head));
}

std::vector<data::Label> predict_label(const Tensor& probs) {
  if (probs.shape().rank() != 2 || probs.dim(1) != kNumClasses)
    throw ShapeError("predict_label: expected (N, 2) probabilities, got " + probs.shape().str());
  std::vector<data::Label> labels;
  labels.reserve(static_cast<std::size_t>(probs.dim(0)));
  for (std::int64_t b = 0; b < probs.dim(0); ++b) {
    const double control = probs[static_cast<std::size_t>(2 * b)];
    const double covid = probs[static_cast<std::size_t>(2 * b + 1)];
    labels.push_back(covid > control ? data::Label::kCovid : data::Label::kControl);
  }
  return labels;
}

Tensor one_hot(const std::vector<data::Label>& labels) {
  Tensor t(Shape{static_cast<std::int64_t>(labels.size()), kNumClasses});
  for (std::size_t i = 0; i < labels.size(); ++i) t[2 * i + static_cast<std::size_t>(labels[i])] = 1.0;
  return t;
}

}  // namespace recovnet::nn
