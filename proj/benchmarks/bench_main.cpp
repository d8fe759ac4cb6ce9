// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "recovnet/explain.hpp"
#include "recovnet/layers.hpp"
#include "recovnet/losses.hpp"
#include "recovnet/networks.hpp"

using namespace recovnet;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(gen);
  return t;
}

Tensor binary(Shape shape, std::uint64_t seed) {
  Tensor t = uniform(std::move(shape), seed);
  for (double& v : t.values()) v = v < 0.5 ? 0.0 : 1.0;
  return t;
}

void BM_ConvForward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const int channels = static_cast<int>(state.range(1));
  nn::Conv2d conv("conv", channels, channels, 3);
  Rng rng(1, 0);
  conv.initialize(rng);
  const Tensor x = uniform(Shape{8, size, size, channels}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, nn::Mode::kTrain));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ConvForward)->Args({64, 32})->Args({32, 64})->Args({8, 256})->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const int channels = static_cast<int>(state.range(1));
  nn::Conv2d conv("conv", channels, channels, 3);
  Rng rng(1, 0);
  conv.initialize(rng);
  const Tensor x = uniform(Shape{8, size, size, channels}, 2);
  const Tensor y = conv.forward(x, nn::Mode::kTrain);
  const Tensor g = uniform(y.shape(), 3, -1.0, 1.0);
  std::vector<Tensor> grads{Tensor(conv.params()[0].value.shape()), Tensor(conv.params()[1].value.shape())};
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(x, y, g, nn::Mode::kTrain, grads));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ConvBackward)->Args({64, 32})->Args({32, 64})->Args({8, 256})->Unit(benchmark::kMillisecond);

void BM_HybridLossWithGrad(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Tensor p = uniform(Shape{32, size, size, 1}, 4, 0.01, 0.99);
  const Tensor t = binary(Shape{32, size, size, 1}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(losses::hybrid_segmentation_loss_with_grad(p, t));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.size()));
}
BENCHMARK(BM_HybridLossWithGrad)->Arg(64)->Arg(224);

void BM_CrossEntropyWithGrad(benchmark::State& state) {
  const Tensor logits = uniform(Shape{64, 2}, 6, -3.0, 3.0);
  const Tensor p = nn::softmax(logits);
  Tensor y(Shape{64, 2});
  for (int i = 0; i < 64; ++i) y[2 * i + (i % 2)] = 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(losses::categorical_cross_entropy_with_grad(p, y));
}
BENCHMARK(BM_CrossEntropyWithGrad);

void BM_SegForward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const auto net = nn::SegNetwork::build({});
  const Tensor x = uniform(Shape{1, size, size, 3}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(nn::seg_forward(net, x));
}
BENCHMARK(BM_SegForward)->Arg(64)->Arg(224)->Unit(benchmark::kMillisecond);

void BM_GradCam(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const auto net = nn::SegNetwork::build({});
  const auto clf = nn::build_classifier(nn::detach_encoder(net), 1);
  const Tensor x = uniform(Shape{1, size, size, 3}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(explain::gradcam(clf, x, 1));
}
BENCHMARK(BM_GradCam)->Arg(64)->Arg(224)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
