// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/training.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "recovnet/checkpoint.hpp"
#include "recovnet/error.hpp"
#include "recovnet/optimizer.hpp"

namespace fs = std::filesystem;

namespace recovnet::train {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

Tensor gather(const Tensor& src, const std::vector<std::size_t>& indices) {
  std::vector<std::int64_t> dims = src.shape().dims();
  const std::size_t per = src.size() / static_cast<std::size_t>(dims[0]);
  dims[0] = static_cast<std::int64_t>(indices.size());
  Tensor out{Shape(dims)};
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy(src.data() + indices[i] * per, src.data() + (indices[i] + 1) * per, out.data() + i * per);
  return out;
}

std::vector<ParamSlot> bind(nn::Sequential& layers, nn::Gradients& grads, std::vector<ParamSlot> slots = {}) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& params = layers.layer(i).params();
    for (std::size_t p = 0; p < params.size(); ++p) slots.push_back({&params[p].value, &grads.per_layer[i][p]});
  }
  return slots;
}

Image prepare(Image im, int size) {
  if (size > 0) im = data::resize_image(im, size, size);
  return im;
}

std::map<std::string, std::string> echo_config(const TrainConfig& cfg, const std::string& phase) {
  return {{"phase", phase},
          {"epochs", std::to_string(cfg.epochs)},
          {"learning_rate", fmt_double(cfg.learning_rate)},
          {"batch_size", std::to_string(cfg.batch_size)},
          {"seed", std::to_string(cfg.seed)},
          {"optimizer", "adam"},
          {"beta1", fmt_double(cfg.beta1)},
          {"beta2", fmt_double(cfg.beta2)},
          {"epsilon", fmt_double(cfg.epsilon)},
          {"recalibrate_statistics", cfg.recalibrate_statistics ? "true" : "false"},
          {"class_order", "control,covid"}};
}

template <typename Step>
TrainHistory run_epochs(std::size_t count, const TrainConfig& cfg, const RunOptions& options, Step&& step) {
  TrainHistory history;
  std::vector<std::size_t> order(count);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed, static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    double weighted = 0.0;
    for (std::size_t begin = 0; begin < count; begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(count, begin + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      weighted += step(batch) * static_cast<double>(batch.size());
    }
    EpochRecord rec{epoch, weighted / static_cast<double>(count),
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    history.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return history;
}

template <typename Model>
void finish_run(TrainHistory& history, const Model& model, const RunOptions& options) {
  for (const auto& [k, v] : options.extra_echo) history.config_echo[k] = v;
  if (!options.run_dir) return;
  fs::create_directories(*options.run_dir);
  write_config_echo(history.config_echo, *options.run_dir / "config.echo");
  write_history_csv(history, *options.run_dir / "history.csv");
  const fs::path ckpt = *options.run_dir / "model.ckpt";
  nn::save_checkpoint(model, ckpt, history.config_echo);
  history.checkpoint = ckpt;
}

}  // namespace

TrainConfig TrainConfig::segmentation_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::classifier_defaults() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-5;
  cfg.batch_size = 64;
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ValidationError("train config: epochs must be > 0");
  if (!(learning_rate > 0.0)) throw ValidationError("train config: learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0))
    throw ValidationError("train config: invalid Adam parameters");
}

SegmentationData load_segmentation_data(const data::DatasetManifest& manifest, int size) {
  if (manifest.task != data::Task::kSegmentation) throw ValidationError("expected a segmentation manifest");
  if (manifest.empty()) throw ValidationError("segmentation manifest is empty");
  std::vector<Image> images, masks;
  for (const auto& r : manifest.records) {
    Image im = prepare(read_image(r.image_path, ColorMode::kRgb), size);
    Image mask = prepare(read_image(*r.mask_path, ColorMode::kGray), size);
    if (im.height != mask.height || im.width != mask.width)
      throw ShapeError("image/mask shape mismatch for " + r.image_path.string());
    for (double& v : mask.pixels) v = v >= 0.5 ? 1.0 : 0.0;
    images.push_back(std::move(im));
    masks.push_back(std::move(mask));
  }
  return {stack_images(images), stack_images(masks)};
}

ClassificationData load_classification_data(const data::DatasetManifest& manifest, int size) {
  if (manifest.task != data::Task::kClassification) throw ValidationError("expected a classification manifest");
  if (manifest.empty()) throw ValidationError("classification manifest is empty");
  std::vector<Image> images;
  std::vector<data::Label> labels;
  for (const auto& r : manifest.records) {
    if (!r.label) throw ValidationError("record without label: " + r.image_path.string());
    images.push_back(prepare(read_image(r.image_path, ColorMode::kRgb), size));
    labels.push_back(*r.label);
  }
  return {stack_images(images), std::move(labels)};
}

TrainHistory train_segmentation(nn::SegNetwork& net, const SegmentationData& data, const TrainConfig& cfg,
                                const RunOptions& options) {
  cfg.validate();
  if (data.images.empty() || data.images.dim(0) == 0) throw ValidationError("train_segmentation: no samples");
  require_rank4(data.images, "train_segmentation images");
  require_rank4(data.masks, "train_segmentation masks");
  if (data.masks.dim(0) != data.images.dim(0) || data.masks.dim(1) != data.images.dim(1) ||
      data.masks.dim(2) != data.images.dim(2) || data.masks.dim(3) != 1)
    throw ShapeError("train_segmentation: image/mask shape mismatch " + data.images.shape().str() + " vs " +
                     data.masks.shape().str());
  net.encoder().check_input(data.images.shape());

  auto& enc = net.encoder().layers;
  auto& dec = net.decoder().layers;
  nn::Gradients enc_grads = enc.make_gradients();
  nn::Gradients dec_grads = dec.make_gradients();
  const auto slots = bind(dec, dec_grads, bind(enc, enc_grads));
  Adam adam({cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon});

  auto step = [&](const std::vector<std::size_t>& batch) {
    const Tensor x = gather(data.images, batch);
    const Tensor y = gather(data.masks, batch);
    enc_grads.zero();
    dec_grads.zero();
    nn::SegPass pass;
    const Tensor pred = net.forward(x, nn::Mode::kTrain, &pass);
    const auto loss = losses::hybrid_segmentation_loss_with_grad(pred, y, options.loss);
    const Tensor g = dec.backward(pass.decoder, loss.grad, nn::Mode::kTrain, &dec_grads);
    enc.backward(pass.encoder, g, nn::Mode::kTrain, &enc_grads);
    enc.update_statistics(pass.encoder);
    dec.update_statistics(pass.decoder);
    adam.step(slots);
    return loss.value;
  };
  TrainHistory history = run_epochs(static_cast<std::size_t>(data.images.dim(0)), cfg, options, step);
  if (cfg.recalibrate_statistics) {
    nn::Sequential* chain[] = {&enc, &dec};
    recalibrate_statistics(chain, data.images, cfg.batch_size);
  }
  history.config_echo = echo_config(cfg, "segmentation");
  history.config_echo["focal_alpha"] = fmt_double(options.loss.focal.alpha);
  history.config_echo["focal_gamma"] = fmt_double(options.loss.focal.gamma);
  history.config_echo["dice_smooth"] = fmt_double(options.loss.smooth);
  history.config_echo["encoder"] = net.encoder().spec.name;
  history.config_echo["encoder_seed"] = std::to_string(net.encoder().spec.seed);
  history.config_echo["decoder_seed"] = std::to_string(net.decoder().spec.seed);
  history.config_echo["samples"] = std::to_string(data.images.dim(0));
  finish_run(history, net, options);
  return history;
}

TrainHistory train_segmentation(nn::SegNetwork& net, const data::DatasetManifest& manifest, const TrainConfig& cfg,
                                const RunOptions& options) {
  return train_segmentation(net, load_segmentation_data(manifest), cfg, options);
}

TrainHistory train_classifier(nn::Classifier& clf, const ClassificationData& data, const TrainConfig& cfg,
                              const RunOptions& options) {
  cfg.validate();
  if (data.images.empty() || data.images.dim(0) == 0) throw ValidationError("train_classifier: no samples");
  if (static_cast<std::int64_t>(data.labels.size()) != data.images.dim(0))
    throw ShapeError("train_classifier: label count does not match image count");
  clf.encoder().check_input(data.images.shape());
  const Tensor targets = nn::one_hot(data.labels);

  auto& enc = clf.encoder().layers;
  auto& head = clf.head();
  nn::Gradients enc_grads = enc.make_gradients();
  nn::Gradients head_grads = head.make_gradients();
  const auto slots = cfg.freeze_encoder ? bind(head, head_grads) : bind(head, head_grads, bind(enc, enc_grads));
  Adam adam({cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon});

  auto step = [&](const std::vector<std::size_t>& batch) {
    const Tensor x = gather(data.images, batch);
    const Tensor y = gather(targets, batch);
    enc_grads.zero();
    head_grads.zero();
    nn::ClassifierPass pass;
    const Tensor probs = nn::softmax(clf.logits(x, nn::Mode::kTrain, &pass));
    const auto loss = losses::categorical_cross_entropy_with_grad(probs, y);
    const Tensor g_logits = nn::softmax_backward(probs, loss.grad);
    const Tensor g = head.backward(pass.head, g_logits, nn::Mode::kTrain, &head_grads);
    if (!cfg.freeze_encoder) {
      enc.backward(pass.encoder, g, nn::Mode::kTrain, &enc_grads);
      enc.update_statistics(pass.encoder);
    }
    adam.step(slots);
    return loss.value;
  };
  TrainHistory history = run_epochs(static_cast<std::size_t>(data.images.dim(0)), cfg, options, step);
  if (cfg.recalibrate_statistics && !cfg.freeze_encoder) {
    nn::Sequential* chain[] = {&enc, &head};
    recalibrate_statistics(chain, data.images, cfg.batch_size);
  }
  history.config_echo = echo_config(cfg, "classification");
  history.config_echo["unfrozen"] = cfg.freeze_encoder ? "false" : "true";
  history.config_echo["encoder"] = clf.encoder().spec.name;
  history.config_echo["samples"] = std::to_string(data.images.dim(0));
  finish_run(history, clf, options);
  return history;
}

TrainHistory train_classifier(nn::Classifier& clf, const data::DatasetManifest& manifest, const TrainConfig& cfg,
                              const RunOptions& options) {
  return train_classifier(clf, load_classification_data(manifest), cfg, options);
}

void recalibrate_statistics(std::span<nn::Sequential* const> chain, const Tensor& images, int batch_size) {
  if (batch_size < 1) throw ValidationError("recalibrate_statistics: batch_size must be >= 1");
  require_rank4(images, "recalibrate_statistics images");
  struct Sum {
    std::vector<double> mean, var;
  };
  std::vector<std::vector<Sum>> sums(chain.size());
  for (std::size_t s = 0; s < chain.size(); ++s) sums[s].resize(chain[s]->size());
  std::int64_t batches = 0;
  for (std::int64_t b = 0; b < images.dim(0); b += batch_size, ++batches) {
    Tensor x = images.slice(b, std::min<std::int64_t>(images.dim(0), b + batch_size));
    for (std::size_t s = 0; s < chain.size(); ++s) {
      nn::Trace trace;
      x = chain[s]->forward(x, nn::Mode::kTrain, &trace);
      for (std::size_t i = 0; i < chain[s]->size(); ++i) {
        if (chain[s]->layer(i).kind() != "batchnorm") continue;
        const Tensor& a = trace.activations[i];
        const auto c = static_cast<std::size_t>(a.dim(a.shape().rank() - 1));
        const double m = static_cast<double>(a.size() / c);
        std::vector<double> mean(c, 0.0), var(c, 0.0);
        for (std::size_t k = 0; k < a.size(); ++k) mean[k % c] += a[k];
        for (double& v : mean) v /= m;
        for (std::size_t k = 0; k < a.size(); ++k) {
          const double d = a[k] - mean[k % c];
          var[k % c] += d * d;
        }
        Sum& sum = sums[s][i];
        if (sum.mean.empty()) sum = {std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
        for (std::size_t j = 0; j < c; ++j) {
          sum.mean[j] += mean[j];
          sum.var[j] += var[j] / m;
        }
      }
    }
  }
  for (std::size_t s = 0; s < chain.size(); ++s) {
    for (std::size_t i = 0; i < chain[s]->size(); ++i) {
      if (sums[s][i].mean.empty()) continue;
      auto& buffers = chain[s]->layer(i).buffers();
      for (std::size_t j = 0; j < sums[s][i].mean.size(); ++j) {
        buffers[0].value[j] = sums[s][i].mean[j] / static_cast<double>(batches);
        buffers[1].value[j] = sums[s][i].var[j] / static_cast<double>(batches);
      }
    }
  }
}

void write_config_echo(const std::map<std::string, std::string>& echo, const fs::path& path) {
  std::error_code dir_ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), dir_ec);
  if (dir_ec) throw IoError("cannot create " + path.parent_path().string() + ": " + dir_ec.message());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : echo) out << k << '=' << v << '\n';
}

std::map<std::string, std::string> read_config_echo(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::string, std::string> echo;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) echo[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return echo;
}

void write_history_csv(const TrainHistory& history, const fs::path& path) {
  std::error_code dir_ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), dir_ec);
  if (dir_ec) throw IoError("cannot create " + path.parent_path().string() + ": " + dir_ec.message());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_loss,seconds\n";
  char buf[96];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.3f\n", e.epoch, e.mean_loss, e.seconds);
    out << buf;
  }
}

double classification_accuracy(const nn::Classifier& clf, const ClassificationData& data, int batch_size) {
  const auto n = data.images.dim(0);
  std::int64_t correct = 0;
  for (std::int64_t b = 0; b < n; b += batch_size) {
    const auto e = std::min<std::int64_t>(n, b + batch_size);
    const auto labels = nn::predict_label(clf.classify(data.images.slice(b, e)));
    for (std::int64_t i = b; i < e; ++i) correct += labels[static_cast<std::size_t>(i - b)] == data.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double mean_dice(const nn::SegNetwork& net, const SegmentationData& data, double threshold, int batch_size) {
  const auto n = data.images.dim(0);
  const std::size_t per = data.masks.size() / static_cast<std::size_t>(n);
  double total = 0.0;
  for (std::int64_t b = 0; b < n; b += batch_size) {
    const auto e = std::min<std::int64_t>(n, b + batch_size);
    const Tensor pred = nn::binarize_mask(nn::seg_forward(net, data.images.slice(b, e)), threshold);
    for (std::int64_t i = b; i < e; ++i) {
      double inter = 0.0, sp = 0.0, st = 0.0;
      for (std::size_t k = 0; k < per; ++k) {
        const double p = pred[static_cast<std::size_t>(i - b) * per + k];
        const double t = data.masks[static_cast<std::size_t>(i) * per + k];
        inter += p * t;
        sp += p;
        st += t;
      }
      total += (sp + st) == 0.0 ? 1.0 : 2.0 * inter / (sp + st);
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace recovnet::train
