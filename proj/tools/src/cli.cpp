// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "recovnet/checkpoint.hpp"
#include "recovnet/dataset.hpp"
#include "recovnet/error.hpp"
#include "recovnet/explain.hpp"
#include "recovnet/metrics.hpp"
#include "recovnet/synthetic.hpp"
#include "recovnet/training.hpp"

namespace fs = std::filesystem;

namespace recovnet::cli {
namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  fs::path workdir = ".";
  std::ostream* out;
  std::ostream* err;

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : workdir / p; }
  fs::path run_dir(const std::string& name) const { return workdir / "run" / name; }
};

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path.string());
}

std::uint64_t default_seed() {
  const char* env = std::getenv("RECOVNET_SEED");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || env[0] == '-') throw UsageError(std::string("RECOVNET_SEED is not an unsigned integer: ") + env);
  return v;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return out.empty() ? "_" : out;
}

// Flat key=value file; '#' starts a comment line.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  require_file(path, "config file");
  std::ifstream in(path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int row = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path.string() + ":" + std::to_string(row) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

// Fills options not given on the command line; unknown keys are errors.
void apply_config(CLI::App& app, CLI::App& sub, const std::vector<std::pair<std::string, std::string>>& entries,
                  const fs::path& path) {
  for (const auto& [key, value] : entries) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt) opt = app.get_option_no_throw("--" + key);
    if (!opt || key == "config" || key == "help")
      throw UsageError("unknown config key '" + key + "' in " + path.string() + " for command " + sub.get_name());
    if (opt->count() > 0) continue;
    opt->add_result(value);
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
}

struct TrainFlags {
  train::TrainConfig cfg;
  int size = 0;
  bool no_recalibrate = false;

  void add(CLI::App& sub, std::uint64_t seed) {
    cfg.seed = seed;
    sub.add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    sub.add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
    sub.add_option("--batch-size", cfg.batch_size, "Mini-batch size")->capture_default_str();
    sub.add_option("--seed", cfg.seed, "Seed (default: RECOVNET_SEED or 0)")->capture_default_str();
    sub.add_option("--beta1", cfg.beta1)->capture_default_str();
    sub.add_option("--beta2", cfg.beta2)->capture_default_str();
    sub.add_option("--adam-epsilon", cfg.epsilon)->capture_default_str();
    sub.add_option("--size", size, "Resize inputs to size x size (0 keeps them)")->capture_default_str();
    sub.add_flag("--no-recalibrate", no_recalibrate, "Keep running batch-norm statistics as trained");
  }
  train::TrainConfig config() const {
    train::TrainConfig c = cfg;
    c.recalibrate_statistics = !no_recalibrate;
    c.validate();
    return c;
  }
};

void print_epoch(const Context& ctx, const train::EpochRecord& e, int epochs) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "epoch %d/%d  loss %.6f  (%.1f s)\n", e.epoch, epochs, e.mean_loss, e.seconds);
  *ctx.out << buf << std::flush;
}

// ---------------------------------------------------------------------------
// make-synthetic

struct MakeSynthetic {
  synth::CorpusSpec spec;
  std::string out = "synthetic";
  bool no_marker = false;

  void add(CLI::App& sub, std::uint64_t seed) {
    spec.seed = seed;
    sub.add_option("--out", out, "Output directory")->capture_default_str();
    sub.add_option("--count", spec.count)->capture_default_str();
    sub.add_option("--size", spec.size)->capture_default_str();
    sub.add_option("--train-fraction", spec.train_fraction)->capture_default_str();
    sub.add_option("--noise", spec.noise)->capture_default_str();
    sub.add_option("--seed", spec.seed)->capture_default_str();
    sub.add_flag("--no-marker", no_marker, "Omit the corner marker");
  }
  void run(const Context& ctx) {
    spec.marker = !no_marker;
    const auto files = synth::write_corpus(spec, ctx.resolve(out));
    *ctx.out << "wrote " << spec.count << " images to " << ctx.resolve(out).string() << "\n"
             << "  " << files.seg_train.string() << "\n  " << files.seg_test.string() << "\n  "
             << files.cls_train.string() << "\n  " << files.cls_test.string() << "\n  " << files.lesions.string()
             << "\n";
  }
};

// ---------------------------------------------------------------------------
// prepare-data

std::map<std::string, std::size_t> parse_targets(const std::string& text) {
  std::map<std::string, std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.rfind('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("targets: expected group=count, got '" + item + "'");
    const std::string count = item.substr(eq + 1);
    if (count.empty() || !std::all_of(count.begin(), count.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      throw UsageError("targets: invalid count in '" + item + "'");
    if (!out.emplace(item.substr(0, eq), std::stoull(count)).second)
      throw UsageError("targets: duplicate group '" + item.substr(0, eq) + "'");
  }
  return out;
}

struct PrepareData {
  std::string manifest;
  std::string out = "prepared";
  std::string targets;
  int size = 224;
  data::SplitSpec split;
  data::AugmentationSpec aug;

  void add(CLI::App& sub, std::uint64_t seed) {
    split.seed = seed;
    sub.add_option("--manifest", manifest, "Input manifest CSV");
    sub.add_option("--out", out, "Output directory")->capture_default_str();
    sub.add_option("--targets", targets, "Per-group training targets: group=count,...");
    sub.add_option("--size", size, "Resize to size x size (0 keeps sizes)")->capture_default_str();
    sub.add_option("--train-fraction", split.train_fraction)->capture_default_str();
    sub.add_option("--shift", aug.shift_fraction, "Maximum shift as a fraction of each dimension")->capture_default_str();
    sub.add_option("--rotation", aug.rotation_degrees, "Maximum rotation in degrees")->capture_default_str();
    sub.add_option("--seed", split.seed)->capture_default_str();
  }

  void run(const Context& ctx) {
    if (manifest.empty()) throw UsageError("prepare-data: --manifest is required");
    if (size < 0) throw UsageError("prepare-data: --size must be >= 0");
    const fs::path in_path = ctx.resolve(manifest);
    require_file(in_path, "manifest");
    split.validate();
    aug.validate();
    const auto target_map = parse_targets(targets);
    const data::DatasetManifest input = data::load_manifest(in_path);
    const fs::path out_dir = ctx.resolve(out);

    // Resized copies.
    data::DatasetManifest resized{input.task, {}};
    std::set<fs::path> written;
    for (const auto& r : input.records) {
      data::SampleRecord copy = r;
      const std::string group = sanitize(r.group());
      copy.image_path = out_dir / "images" / group / (r.image_path.stem().string() + ".png");
      if (!written.insert(copy.image_path).second)
        throw ValidationError("prepare-data: two images map to " + copy.image_path.string());
      Image im = read_image(r.image_path, ColorMode::kNative);
      if (size > 0) im = data::resize_image(im, size, size);
      write_png(copy.image_path, im);
      if (r.mask_path) {
        copy.mask_path = out_dir / "masks" / group / (r.mask_path->stem().string() + ".png");
        Image mask = read_image(*r.mask_path, ColorMode::kGray);
        if (size > 0) mask = data::resize_image(mask, size, size);
        for (double& v : mask.pixels) v = v >= 0.5 ? 1.0 : 0.0;
        write_png(*copy.mask_path, mask);
      }
      resized.records.push_back(std::move(copy));
    }

    // Split: preassigned records keep their split.
    data::DatasetManifest unassigned{input.task, {}};
    for (const auto& r : resized.records)
      if (r.split == data::Split::kUnassigned) unassigned.records.push_back(r);
    std::set<fs::path> to_train;
    if (!unassigned.empty()) {
      const auto parts = data::stratified_split(unassigned, split);
      for (const auto& r : parts.train.records) to_train.insert(r.image_path);
    }
    data::DatasetManifest train{input.task, {}}, test{input.task, {}};
    for (auto r : resized.records) {
      const bool is_train = r.split == data::Split::kTrain ||
                            (r.split == data::Split::kUnassigned && to_train.count(r.image_path) > 0);
      r.split = is_train ? data::Split::kTrain : data::Split::kTest;
      (is_train ? train : test).records.push_back(std::move(r));
    }

    // Augmentation to per-group targets.
    const auto groups = data::partition_by_group(train);
    std::vector<data::DatasetManifest> per_group;
    std::vector<std::size_t> group_targets;
    std::set<std::string> known;
    for (const auto& [name, records] : groups) {
      known.insert(name);
      per_group.push_back(records);
      const auto it = target_map.find(name);
      group_targets.push_back(it == target_map.end() ? records.size() : it->second);
    }
    for (const auto& [name, count] : target_map)
      if (!known.count(name)) throw UsageError("targets: unknown group '" + name + "'");
    data::DatasetManifest augmented{input.task, {}};
    if (!per_group.empty())
      augmented = data::build_training_set(per_group, group_targets, aug, split.seed, out_dir / "augmented");
    for (auto& r : augmented.records) r.split = data::Split::kTrain;

    data::save_manifest(augmented, out_dir / "train.csv");
    data::save_manifest(test, out_dir / "test.csv");
    write_summary(ctx, resized, train, test, augmented, out_dir / "summary.csv");
  }

  static void write_summary(const Context& ctx, const data::DatasetManifest& all, const data::DatasetManifest& train,
                            const data::DatasetManifest& test, const data::DatasetManifest& augmented,
                            const fs::path& path) {
    struct Row {
      std::size_t total = 0, train = 0, test = 0, augmented = 0;
    };
    std::vector<std::string> order;
    std::map<std::string, Row> rows;
    auto row = [&](const std::string& g) -> Row& {
      if (!rows.count(g)) order.push_back(g);
      return rows[g];
    };
    for (const auto& r : all.records) ++row(r.group()).total;
    for (const auto& r : train.records) ++row(r.group()).train;
    for (const auto& r : test.records) ++row(r.group()).test;
    for (const auto& r : augmented.records) ++row(r.group()).augmented;
    Row sum;
    std::ofstream csv(path, std::ios::binary);
    if (!csv) throw IoError("cannot write " + path.string());
    csv << "group,samples,train,test,augmented_train\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-24s %10s %10s %10s %12s\n", "group", "samples", "train", "test", "augmented");
    *ctx.out << buf;
    for (const auto& g : order) {
      const Row& r = rows[g];
      csv << g << ',' << r.total << ',' << r.train << ',' << r.test << ',' << r.augmented << '\n';
      std::snprintf(buf, sizeof(buf), "%-24s %10zu %10zu %10zu %12zu\n", g.c_str(), r.total, r.train, r.test,
                    r.augmented);
      *ctx.out << buf;
      sum.total += r.total;
      sum.train += r.train;
      sum.test += r.test;
      sum.augmented += r.augmented;
    }
    csv << "total," << sum.total << ',' << sum.train << ',' << sum.test << ',' << sum.augmented << '\n';
    std::snprintf(buf, sizeof(buf), "%-24s %10zu %10zu %10zu %12zu\n", "total", sum.total, sum.train, sum.test,
                  sum.augmented);
    *ctx.out << buf;
  }
};

// ---------------------------------------------------------------------------
// train-seg

struct TrainSeg {
  std::string train_manifest;
  std::string test_manifest;
  std::string name = "seg";
  std::string encoder = "reference";
  std::string encoder_checkpoint;
  losses::SegmentationLossParams loss;
  TrainFlags flags;

  void add(CLI::App& sub, std::uint64_t seed) {
    flags.cfg = train::TrainConfig::segmentation_defaults();
    flags.add(sub, seed);
    sub.add_option("--train", train_manifest, "Segmentation training manifest");
    sub.add_option("--test", test_manifest, "Optional held-out manifest for a dice report");
    sub.add_option("--name", name, "Run name under run/")->capture_default_str();
    sub.add_option("--encoder", encoder, "Registered encoder name")->capture_default_str();
    sub.add_option("--encoder-checkpoint", encoder_checkpoint, "Initialize the encoder from a checkpoint");
    sub.add_option("--focal-alpha", loss.focal.alpha)->capture_default_str();
    sub.add_option("--focal-gamma", loss.focal.gamma)->capture_default_str();
    sub.add_option("--dice-smooth", loss.smooth)->capture_default_str();
  }

  void run(const Context& ctx) {
    if (train_manifest.empty()) throw UsageError("train-seg: --train is required");
    const fs::path train_path = ctx.resolve(train_manifest);
    require_file(train_path, "training manifest");
    const auto cfg = flags.config();
    nn::EncoderSpec enc;
    enc.name = encoder;
    enc.seed = cfg.seed;
    if (!encoder_checkpoint.empty()) {
      enc.init = nn::EncoderInit::kPretrainedCheckpoint;
      enc.checkpoint = ctx.resolve(encoder_checkpoint);
      require_file(enc.checkpoint, "encoder checkpoint");
    }
    nn::DecoderSpec dec;
    dec.seed = cfg.seed + 1;
    auto net = nn::SegNetwork::build(enc, dec);

    const auto data = train::load_segmentation_data(data::load_manifest(train_path), flags.size);
    train::RunOptions options;
    options.run_dir = ctx.run_dir(name);
    options.loss = loss;
    options.extra_echo = {{"train_manifest", train_path.string()}, {"size", std::to_string(flags.size)}};
    if (!encoder_checkpoint.empty()) options.extra_echo["encoder_checkpoint"] = enc.checkpoint.string();
    options.on_epoch = [&](const train::EpochRecord& e) { print_epoch(ctx, e, cfg.epochs); };
    const auto history = train::train_segmentation(net, data, cfg, options);
    *ctx.out << "checkpoint " << history.checkpoint->string() << "\n";
    if (!test_manifest.empty()) {
      const fs::path test_path = ctx.resolve(test_manifest);
      require_file(test_path, "test manifest");
      const auto test = train::load_segmentation_data(data::load_manifest(test_path), flags.size);
      *ctx.out << "held-out dice " << fmt("%.6f", train::mean_dice(net, test)) << "\n";
    }
  }
};

// ---------------------------------------------------------------------------
// build-clf

struct BuildClf {
  std::string seg = "run/seg/model.ckpt";
  std::string name = "clf-init";
  std::uint64_t seed = 0;

  void add(CLI::App& sub, std::uint64_t s) {
    seed = s;
    sub.add_option("--seg", seg, "Phase-I segmentation checkpoint")->capture_default_str();
    sub.add_option("--name", name, "Run name under run/")->capture_default_str();
    sub.add_option("--seed", seed, "Head initialization seed")->capture_default_str();
  }

  void run(const Context& ctx) {
    const fs::path seg_path = ctx.resolve(seg);
    require_file(seg_path, "build-clf requires a segmentation checkpoint from train-seg;");
    const auto net = nn::load_segmentation_checkpoint(seg_path);
    const auto clf = nn::build_classifier(nn::detach_encoder(net), seed);
    const fs::path dir = ctx.run_dir(name);
    fs::create_directories(dir);
    const std::map<std::string, std::string> echo{{"phase", "build_classifier"},
                                                  {"segmentation_checkpoint", seg_path.string()},
                                                  {"head_seed", std::to_string(seed)},
                                                  {"class_order", "control,covid"}};
    train::write_config_echo(echo, dir / "config.echo");
    nn::save_checkpoint(clf, dir / "model.ckpt", echo);
    *ctx.out << "checkpoint " << (dir / "model.ckpt").string() << "\n";
  }
};

// ---------------------------------------------------------------------------
// train-clf

struct TrainClf {
  std::string init = "run/clf-init/model.ckpt";
  std::string train_manifest;
  std::string name = "clf";
  bool freeze = false;
  TrainFlags flags;

  void add(CLI::App& sub, std::uint64_t seed) {
    flags.cfg = train::TrainConfig::classifier_defaults();
    flags.add(sub, seed);
    sub.add_option("--init", init, "Classifier checkpoint from build-clf")->capture_default_str();
    sub.add_option("--train", train_manifest, "Classification training manifest");
    sub.add_option("--name", name, "Run name under run/")->capture_default_str();
    sub.add_flag("--freeze-encoder", freeze, "Train the head only");
  }

  void run(const Context& ctx) {
    if (train_manifest.empty()) throw UsageError("train-clf: --train is required");
    const fs::path init_path = ctx.resolve(init);
    require_file(init_path, "train-clf requires a classifier checkpoint from build-clf;");
    const fs::path train_path = ctx.resolve(train_manifest);
    require_file(train_path, "training manifest");
    auto cfg = flags.config();
    cfg.freeze_encoder = freeze;
    auto clf = nn::load_classifier_checkpoint(init_path);
    const auto data = train::load_classification_data(data::load_manifest(train_path), flags.size);
    train::RunOptions options;
    options.run_dir = ctx.run_dir(name);
    options.extra_echo = {{"train_manifest", train_path.string()},
                          {"init_checkpoint", init_path.string()},
                          {"size", std::to_string(flags.size)}};
    options.on_epoch = [&](const train::EpochRecord& e) { print_epoch(ctx, e, cfg.epochs); };
    const auto history = train::train_classifier(clf, data, cfg, options);
    *ctx.out << "checkpoint " << history.checkpoint->string() << "\n";
    *ctx.out << "training accuracy " << fmt("%.6f", train::classification_accuracy(clf, data)) << "\n";
  }
};

// ---------------------------------------------------------------------------
// evaluate

std::vector<data::Label> read_predictions(const fs::path& path, const data::DatasetManifest& manifest) {
  require_file(path, "predictions file");
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line) || (line != "image_path,predicted" && line != "image_path,predicted\r"))
    throw ValidationError(path.string() + ": expected header image_path,predicted");
  std::map<fs::path, data::Label> by_path;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw ValidationError(path.string() + ":" + std::to_string(row) + ": malformed row");
    fs::path p = line.substr(0, comma);
    if (p.is_relative()) p = path.parent_path() / p;
    const std::string value = line.substr(comma + 1);
    data::Label label;
    if (value == "0") label = data::Label::kControl;
    else if (value == "1") label = data::Label::kCovid;
    else label = data::parse_label(value);
    if (!by_path.emplace(p.lexically_normal(), label).second)
      throw ValidationError(path.string() + ":" + std::to_string(row) + ": duplicate prediction for " + p.string());
  }
  std::vector<data::Label> out;
  out.reserve(manifest.size());
  for (const auto& r : manifest.records) {
    const auto it = by_path.find(r.image_path.lexically_normal());
    if (it == by_path.end()) throw ValidationError("no prediction for " + r.image_path.string());
    out.push_back(it->second);
  }
  if (out.size() != by_path.size()) throw ValidationError("predictions reference images outside the test manifest");
  return out;
}

std::vector<data::Label> predict_labels(const nn::Classifier& clf, const train::ClassificationData& data) {
  std::vector<data::Label> out;
  const auto n = data.images.dim(0);
  for (std::int64_t b = 0; b < n; b += 32) {
    const auto labels = nn::predict_label(clf.classify(data.images.slice(b, std::min<std::int64_t>(n, b + 32))));
    out.insert(out.end(), labels.begin(), labels.end());
  }
  return out;
}

struct Evaluate {
  std::string checkpoint;
  std::string test_manifest;
  std::string out = "eval";
  std::string predictions;
  std::string model_name;
  double threshold = 0.5;
  int size = 0;

  void add(CLI::App& sub) {
    sub.add_option("--checkpoint", checkpoint, "Classifier or segmentation checkpoint");
    sub.add_option("--test", test_manifest, "Test manifest");
    sub.add_option("--out", out, "Output directory")->capture_default_str();
    sub.add_option("--predictions", predictions, "CSV image_path,predicted used instead of a model");
    sub.add_option("--model-name", model_name, "Row label in report.md");
    sub.add_option("--threshold", threshold, "Mask binarization threshold")->capture_default_str();
    sub.add_option("--size", size, "Resize inputs to size x size (0 keeps them)")->capture_default_str();
  }

  void run(const Context& ctx) {
    if (test_manifest.empty()) throw UsageError("evaluate: --test is required");
    if (checkpoint.empty() && predictions.empty())
      throw UsageError("evaluate: one of --checkpoint or --predictions is required");
    if (!checkpoint.empty() && !predictions.empty())
      throw UsageError("evaluate: --checkpoint and --predictions are exclusive");
    const fs::path test_path = ctx.resolve(test_manifest);
    require_file(test_path, "test manifest");
    const bool injected = !predictions.empty();
    const auto manifest = data::load_manifest(test_path, {.check_files = !injected});

    metrics::ConfusionMatrix cm;
    std::optional<double> dice;
    std::string name = model_name;
    if (injected) {
      if (manifest.task != data::Task::kClassification)
        throw UsageError("evaluate: --predictions requires a classification manifest");
      std::vector<data::Label> truth;
      for (const auto& r : manifest.records) truth.push_back(*r.label);
      cm = metrics::confusion_matrix(read_predictions(ctx.resolve(predictions), manifest), truth);
      if (name.empty()) name = "predictions";
    } else {
      const fs::path ckpt = ctx.resolve(checkpoint);
      require_file(ckpt, "checkpoint");
      const auto info = nn::read_checkpoint_info(ckpt);
      if (name.empty()) name = info.encoder.name;
      if (info.kind == nn::ModelKind::kClassifier) {
        if (manifest.task != data::Task::kClassification)
          throw UsageError("evaluate: classifier checkpoint needs a classification manifest");
        if (!manifest.empty()) {
          const auto clf = nn::load_classifier_checkpoint(ckpt);
          const auto test = train::load_classification_data(manifest, size);
          cm = metrics::confusion_matrix(predict_labels(clf, test), test.labels);
        }
      } else {
        if (manifest.task != data::Task::kSegmentation)
          throw UsageError("evaluate: segmentation checkpoint needs a segmentation manifest");
        if (!manifest.empty()) {
          const auto net = nn::load_segmentation_checkpoint(ckpt);
          const auto test = train::load_segmentation_data(manifest, size);
          for (std::int64_t b = 0; b < test.images.dim(0); b += 16) {
            const auto e = std::min<std::int64_t>(test.images.dim(0), b + 16);
            const Tensor pred = nn::binarize_mask(nn::seg_forward(net, test.images.slice(b, e)), threshold);
            cm += metrics::pixel_confusion(pred, test.masks.slice(b, e));
          }
          dice = train::mean_dice(net, test, threshold);
        }
      }
    }

    const auto report = metrics::full_report(cm);
    const fs::path out_dir = ctx.resolve(out);
    fs::create_directories(out_dir);
    {
      std::ofstream csv(out_dir / "report.csv", std::ios::binary);
      if (!csv) throw IoError("cannot write " + (out_dir / "report.csv").string());
      csv << "metric,value,percent\n";
      for (const auto& [key, value] : metrics::report_rows(report))
        csv << key << ',' << fmt("%.17g", value) << ',' << metrics::format_percent3(value) << '\n';
      if (dice) csv << "mean_dice," << fmt("%.17g", *dice) << ',' << metrics::format_percent3(*dice) << '\n';
    }
    {
      std::ofstream csv(out_dir / "cm.csv", std::ios::binary);
      if (!csv) throw IoError("cannot write " + (out_dir / "cm.csv").string());
      csv << "tp,fp,tn,fn\n" << cm.tp << ',' << cm.fp << ',' << cm.tn << ',' << cm.fn << '\n';
    }
    const std::string table = metrics::markdown_table(name, report);
    {
      std::ofstream md(out_dir / "report.md", std::ios::binary);
      if (!md) throw IoError("cannot write " + (out_dir / "report.md").string());
      md << table;
    }
    *ctx.out << table;
    *ctx.out << "tp " << cm.tp << "  fp " << cm.fp << "  tn " << cm.tn << "  fn " << cm.fn << "\n";
    if (dice) *ctx.out << "mean dice " << fmt("%.6f", *dice) << "\n";
  }
};

// ---------------------------------------------------------------------------
// gradcam

struct GradCam {
  std::string checkpoint;
  std::vector<std::string> images;
  std::string class_name = "predicted";
  std::string out = "gradcam";
  std::string layer;
  bool csv = false;
  int size = 0;

  void add(CLI::App& sub) {
    sub.add_option("--checkpoint", checkpoint, "Classifier checkpoint");
    sub.add_option("--image", images, "Input image(s)");
    sub.add_option("--class", class_name, "control, covid, 0, 1 or predicted")->capture_default_str();
    sub.add_option("--out", out, "Output directory")->capture_default_str();
    sub.add_option("--layer", layer, "Target layer (default: last encoder layer)");
    sub.add_flag("--csv", csv, "Also write the map as a CSV grid");
    sub.add_option("--size", size, "Resize inputs to size x size (0 keeps them)")->capture_default_str();
  }

  void run(const Context& ctx) {
    if (checkpoint.empty()) throw UsageError("gradcam: --checkpoint is required");
    if (images.empty()) throw UsageError("gradcam: --image is required");
    std::optional<int> fixed_class;
    if (class_name == "0" || class_name == "control") fixed_class = 0;
    else if (class_name == "1" || class_name == "covid") fixed_class = 1;
    else if (class_name != "predicted") throw UsageError("gradcam: invalid --class '" + class_name + "'");
    const fs::path ckpt = ctx.resolve(checkpoint);
    require_file(ckpt, "checkpoint");
    const auto clf = nn::load_classifier_checkpoint(ckpt);
    const fs::path out_dir = ctx.resolve(out);
    for (const auto& image_arg : images) {
      const fs::path path = ctx.resolve(image_arg);
      require_file(path, "image");
      Image im = read_image(path, ColorMode::kRgb);
      if (size > 0) im = data::resize_image(im, size, size);
      const Tensor batch = stack_images({im});
      const int cls = fixed_class ? *fixed_class : static_cast<int>(nn::predict_label(clf.classify(batch))[0]);
      const auto map = explain::gradcam(clf, batch, cls, layer);
      const std::string label(data::to_string(static_cast<data::Label>(cls)));
      const fs::path png = out_dir / (path.stem().string() + "__cam_" + label + ".png");
      explain::overlay(im, map, png);
      *ctx.out << png.string();
      if (csv) {
        const fs::path grid = out_dir / (path.stem().string() + "__cam_" + label + ".csv");
        explain::write_map_csv(map, grid);
        *ctx.out << ' ' << grid.string();
      }
      *ctx.out << "  layer " << map.target_layer << "\n";
    }
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx;
  ctx.out = &out;
  ctx.err = &err;
  try {
    const std::uint64_t seed = default_seed();
    CLI::App app{"Two-phase chest X-ray segmentation pre-training and COVID classification", "recovnet"};
    app.require_subcommand(1);
    std::string workdir = ".";
    std::string config;
    app.add_option("--workdir", workdir, "Base directory for all relative paths")->capture_default_str();
    app.add_option("--config", config, "key=value file; command-line flags take precedence");

    MakeSynthetic make_synthetic;
    PrepareData prepare;
    TrainSeg train_seg;
    BuildClf build_clf;
    TrainClf train_clf;
    Evaluate evaluate;
    GradCam gradcam;
    std::vector<std::pair<CLI::App*, std::function<void()>>> commands;
    auto* s = app.add_subcommand("make-synthetic", "Write the synthetic lungs/lesions corpus");
    make_synthetic.add(*s, seed);
    commands.emplace_back(s, [&] { make_synthetic.run(ctx); });
    s = app.add_subcommand("prepare-data", "Resize, split and augment a manifest");
    prepare.add(*s, seed);
    commands.emplace_back(s, [&] { prepare.run(ctx); });
    s = app.add_subcommand("train-seg", "Phase I: train encoder and decoder on lung masks");
    train_seg.add(*s, seed);
    commands.emplace_back(s, [&] { train_seg.run(ctx); });
    s = app.add_subcommand("build-clf", "Attach a classification head to a trained encoder");
    build_clf.add(*s, seed);
    commands.emplace_back(s, [&] { build_clf.run(ctx); });
    s = app.add_subcommand("train-clf", "Phase II: fine-tune the classifier");
    train_clf.add(*s, seed);
    commands.emplace_back(s, [&] { train_clf.run(ctx); });
    s = app.add_subcommand("evaluate", "Report metrics on a test manifest");
    evaluate.add(*s);
    commands.emplace_back(s, [&] { evaluate.run(ctx); });
    s = app.add_subcommand("gradcam", "Write Grad-CAM overlays");
    gradcam.add(*s);
    commands.emplace_back(s, [&] { gradcam.run(ctx); });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kExitOk : kExitUsage;
    }

    for (auto& [sub, fn] : commands) {
      if (!sub->parsed()) continue;
      if (!config.empty()) {
        const fs::path cfg_path = fs::path(config).is_absolute() ? fs::path(config) : fs::path(workdir) / config;
        apply_config(app, *sub, read_config_file(cfg_path), cfg_path);
      }
      ctx.workdir = workdir;
      fn();
    }
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ManifestError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    const bool config_problem =
        e.failure() == CheckpointFailure::kKindMismatch || e.failure() == CheckpointFailure::kSpecMismatch;
    return config_problem ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace recovnet::cli
