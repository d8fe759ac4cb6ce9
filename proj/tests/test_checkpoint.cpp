// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "oracles.hpp"
#include "recovnet/checkpoint.hpp"
#include "recovnet/error.hpp"

namespace fs = std::filesystem;
using namespace recovnet;
using namespace recovnet::nn;

namespace {

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

std::uint64_t fnv(const std::vector<char>& b, std::size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(b[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

CheckpointFailure failure_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const CheckpointError& e) {
    return e.failure();
  }
  ADD_FAILURE() << "no CheckpointError";
  return CheckpointFailure::kIo;
}

SegNetwork small_net(std::uint64_t seed) {
  EncoderSpec spec;
  spec.seed = seed;
  DecoderSpec dec;
  dec.seed = seed + 1;
  return SegNetwork::build(spec, dec);
}

}  // namespace

TEST(Checkpoint, SegmentationRoundTrip) {
  const auto dir = oracle::temp_dir("ckpt_seg");
  SegNetwork net = small_net(3);
  std::mt19937_64 gen(1);
  // Perturb the running statistics so buffers are covered by the comparison.
  for (auto& [name, t] : net.encoder().layers.state())
    if (name.find("moving") != std::string::npos)
      for (double& v : t->values()) v += 0.1;
  save_checkpoint(net, dir / "seg.ckpt", {{"note", "x"}});
  const SegNetwork back = load_segmentation_checkpoint(dir / "seg.ckpt");
  const Tensor probe = oracle::random_tensor(Shape{2, 64, 64, 3}, gen, 0, 1);
  const Tensor a = seg_forward(net, probe);
  const Tensor b = seg_forward(back, probe);
  EXPECT_LE(oracle::max_relative_error({a.values().begin(), a.values().end()}, b.values(), 1.0), 1e-6);
  EXPECT_EQ(a, b);
  const auto info = read_checkpoint_info(dir / "seg.ckpt");
  EXPECT_EQ(info.kind, ModelKind::kSegmentation);
  EXPECT_EQ(info.version, kCheckpointVersion);
  EXPECT_EQ(info.encoder, net.encoder().spec);
  ASSERT_TRUE(info.decoder);
  EXPECT_EQ(*info.decoder, net.decoder().spec);
  EXPECT_EQ(info.class_order, (std::vector<std::string>{"control", "covid"}));
  EXPECT_EQ(info.metadata.at("note"), "x");
}

TEST(Checkpoint, ClassifierRoundTripAndEncoderTransfer) {
  const auto dir = oracle::temp_dir("ckpt_clf");
  const SegNetwork net = small_net(5);
  const Classifier clf = build_classifier(detach_encoder(net), 9);
  save_checkpoint(clf, dir / "clf.ckpt");
  const Classifier back = load_classifier_checkpoint(dir / "clf.ckpt");
  std::mt19937_64 gen(2);
  const Tensor probe = oracle::random_tensor(Shape{3, 64, 64, 3}, gen, 0, 1);
  EXPECT_EQ(clf.classify(probe), back.classify(probe));

  save_checkpoint(net, dir / "seg.ckpt");
  Encoder fresh = build_encoder(EncoderSpec{});
  load_encoder_weights(fresh, dir / "seg.ckpt");
  EXPECT_EQ(fresh.layers.forward(probe, Mode::kEval), net.encoder().layers.forward(probe, Mode::kEval));
}

TEST(Checkpoint, KindMismatch) {
  const auto dir = oracle::temp_dir("ckpt_kind");
  const SegNetwork net = small_net(1);
  save_checkpoint(net, dir / "seg.ckpt");
  save_checkpoint(build_classifier(detach_encoder(net), 2), dir / "clf.ckpt");
  EXPECT_EQ(failure_of([&] { load_classifier_checkpoint(dir / "seg.ckpt"); }), CheckpointFailure::kKindMismatch);
  EXPECT_EQ(failure_of([&] { load_segmentation_checkpoint(dir / "clf.ckpt"); }), CheckpointFailure::kKindMismatch);
}

TEST(Checkpoint, DamagedFiles) {
  const auto dir = oracle::temp_dir("ckpt_damage");
  save_checkpoint(small_net(4), dir / "seg.ckpt");
  const auto good = read_bytes(dir / "seg.ckpt");

  EXPECT_EQ(failure_of([&] { load_segmentation_checkpoint(dir / "missing.ckpt"); }), CheckpointFailure::kIo);

  auto truncated = good;
  truncated.resize(good.size() / 2);
  write_bytes(dir / "trunc.ckpt", truncated);
  EXPECT_EQ(failure_of([&] { load_segmentation_checkpoint(dir / "trunc.ckpt"); }), CheckpointFailure::kCorrupt);

  auto flipped = good;
  flipped[good.size() - 100] ^= 0x5a;
  write_bytes(dir / "flip.ckpt", flipped);
  EXPECT_EQ(failure_of([&] { load_segmentation_checkpoint(dir / "flip.ckpt"); }), CheckpointFailure::kCorrupt);

  write_bytes(dir / "junk.ckpt", std::vector<char>(64, 'x'));
  EXPECT_EQ(failure_of([&] { read_checkpoint_info(dir / "junk.ckpt"); }), CheckpointFailure::kCorrupt);

  // A well-formed file from a future format version.
  auto future = good;
  const std::uint32_t v = kCheckpointVersion + 1;
  std::memcpy(future.data() + 8, &v, sizeof(v));
  const std::uint64_t sum = fnv(future, future.size() - 8);
  std::memcpy(future.data() + future.size() - 8, &sum, sizeof(sum));
  write_bytes(dir / "future.ckpt", future);
  EXPECT_EQ(failure_of([&] { load_segmentation_checkpoint(dir / "future.ckpt"); }), CheckpointFailure::kVersion);
}

TEST(Checkpoint, EncoderTransferRejectsOtherTopology) {
  const auto dir = oracle::temp_dir("ckpt_topology");
  save_checkpoint(small_net(4), dir / "seg.ckpt");
  Encoder other = oracle::linear_classifier(1.0).encoder();
  EXPECT_EQ(failure_of([&] { load_encoder_weights(other, dir / "seg.ckpt"); }), CheckpointFailure::kSpecMismatch);
}
