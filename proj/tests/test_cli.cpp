// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "recovnet/checkpoint.hpp"
#include "recovnet/cli.hpp"
#include "recovnet/image.hpp"
#include "recovnet/training.hpp"

namespace fs = std::filesystem;
using namespace recovnet;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = recovnet::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string loss_columns(const fs::path& history) {
  std::istringstream in(slurp(history));
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

// A small trained chain shared by the tests below.
class Chain : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = oracle::temp_dir("cli_chain");
    const std::string w = dir.string();
    ASSERT_EQ(invoke({"--workdir", w, "make-synthetic", "--count", "16", "--size", "32", "--seed", "3"}).code, 0);
    ASSERT_EQ(invoke({"--workdir", w, "train-seg", "--train", "synthetic/seg_train.csv", "--epochs", "1",
                   "--batch-size", "8", "--seed", "4"})
                  .code,
              0);
    ASSERT_EQ(invoke({"--workdir", w, "build-clf"}).code, 0);
  }
  static fs::path dir;
};
fs::path Chain::dir;

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"no-such-command"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"train-seg", "--epochs", "x"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"--help"}).code, cli::kExitOk);
}

TEST(Cli, MissingManifestNamesPath) {
  const auto dir = oracle::temp_dir("cli_missing");
  const auto r = invoke({"--workdir", dir.string(), "prepare-data", "--manifest", "nothere.csv"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find((dir / "nothere.csv").string()), std::string::npos) << r.err;
  const auto t = invoke({"--workdir", dir.string(), "train-seg", "--train", "absent.csv"});
  EXPECT_EQ(t.code, cli::kExitUsage);
  EXPECT_NE(t.err.find("absent.csv"), std::string::npos);
}

TEST(Cli, TrainClfWithoutBuildClf) {
  const auto dir = oracle::temp_dir("cli_order");
  const std::string w = dir.string();
  ASSERT_EQ(invoke({"--workdir", w, "make-synthetic", "--count", "4", "--size", "32"}).code, 0);
  const auto r = invoke({"--workdir", w, "train-clf", "--train", "synthetic/cls_train.csv"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("build-clf"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find((dir / "run/clf-init/model.ckpt").string()), std::string::npos) << r.err;
  const auto b = invoke({"--workdir", w, "build-clf"});
  EXPECT_EQ(b.code, cli::kExitUsage);
  EXPECT_NE(b.err.find("run/seg/model.ckpt"), std::string::npos) << b.err;
}

TEST(Cli, PredictionInjectionReproducesReferenceRow) {
  const auto dir = oracle::temp_dir("cli_inject");
  const auto& cm = oracle::kRecovNetV2Cm;
  std::ofstream manifest(dir / "test.csv"), preds(dir / "pred.csv");
  manifest << "image_path,label,mask_path,source,split,view\n";
  preds << "image_path,predicted\n";
  int n = 0;
  auto add = [&](std::int64_t count, const char* truth, const char* predicted) {
    for (std::int64_t i = 0; i < count; ++i, ++n) {
      manifest << "img/" << n << ".png," << truth << ",,,test,\n";
      preds << "img/" << n << ".png," << predicted << "\n";
    }
  };
  add(cm.tp, "covid", "covid");
  add(cm.fp, "control", "covid");
  add(cm.tn, "control", "control");
  add(cm.fn, "covid", "control");
  manifest.close();
  preds.close();
  const auto r = invoke({"--workdir", dir.string(), "evaluate", "--test", "test.csv", "--predictions", "pred.csv",
                      "--model-name", "ReCovNet-v2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "eval/cm.csv"), "tp,fp,tn,fn\n1035,63,27334,15\n");
  const std::string report = slurp(dir / "eval/report.csv");
  for (const char* cell : {"sensitivity,", ",98.571\n", ",99.770\n", ",94.262\n", ",96.369\n", ",97.678\n", ",99.726\n"})
    EXPECT_NE(report.find(cell), std::string::npos) << cell;
  EXPECT_NE(slurp(dir / "eval/report.md").find("| ReCovNet-v2 | 98.571 | 99.770 | 94.262 | 96.369 | 97.678 | 99.726 |"),
            std::string::npos);
}

TEST(Cli, EmptyTestManifestIsUndefinedMetric) {
  const auto dir = oracle::temp_dir("cli_empty");
  std::ofstream(dir / "test.csv") << "image_path,label,mask_path,source,split,view\n";
  std::ofstream(dir / "pred.csv") << "image_path,predicted\n";
  const auto r = invoke({"--workdir", dir.string(), "evaluate", "--test", "test.csv", "--predictions", "pred.csv"});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("undefined"), std::string::npos) << r.err;
}

TEST(Cli, ConfigFilePrecedenceAndUnknownKeys) {
  const auto dir = oracle::temp_dir("cli_config");
  const std::string w = dir.string();
  std::ofstream(dir / "synth.cfg") << "# corpus\ncount = 6\nsize=32\ntrain_fraction=0.5\n";
  ASSERT_EQ(invoke({"--workdir", w, "--config", (dir / "synth.cfg").string(), "make-synthetic", "--count", "4"}).code,
            0);
  // Flag wins for count, file supplies size and train fraction.
  const auto m = data::load_manifest(dir / "synthetic/cls_train.csv");
  EXPECT_EQ(m.size(), 2u);
  EXPECT_EQ(read_image(m.records[0].image_path, ColorMode::kGray).width, 32);
  std::ofstream(dir / "bad.cfg") << "learning_rate=1\n";
  const auto r = invoke({"--workdir", w, "--config", (dir / "bad.cfg").string(), "make-synthetic"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("learning-rate"), std::string::npos) << r.err;
  std::ofstream(dir / "typed.cfg") << "count=many\n";
  EXPECT_EQ(invoke({"--workdir", w, "--config", (dir / "typed.cfg").string(), "make-synthetic"}).code, cli::kExitUsage);
}

TEST_F(Chain, SeedFromEnvironment) {
  ::setenv("RECOVNET_SEED", "77", 1);
  const auto r = invoke({"--workdir", dir.string(), "build-clf", "--name", "env"});
  ::unsetenv("RECOVNET_SEED");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(train::read_config_echo(dir / "run/env/config.echo").at("head_seed"), "77");
  ::setenv("RECOVNET_SEED", "abc", 1);
  EXPECT_EQ(invoke({"--workdir", dir.string(), "build-clf", "--name", "env2"}).code, cli::kExitUsage);
  ::unsetenv("RECOVNET_SEED");
}

TEST_F(Chain, BuildClfTransfersEncoderBitwise) {
  const auto seg = nn::load_segmentation_checkpoint(dir / "run/seg/model.ckpt");
  auto clf = nn::load_classifier_checkpoint(dir / "run/clf-init/model.ckpt");
  const auto a = seg.encoder().layers.state();
  const auto b = std::as_const(clf).encoder().layers.state();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(*a[i].second, *b[i].second);
  }
}

TEST_F(Chain, TrainClfRunLayoutAndDeterminism) {
  const std::string w = dir.string();
  for (const char* name : {"c1", "c2"}) {
    const auto r = invoke({"--workdir", w, "train-clf", "--train", "synthetic/cls_train.csv", "--name", name,
                        "--epochs", "2", "--batch-size", "4", "--lr", "1e-3", "--seed", "5"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("training accuracy"), std::string::npos);
    for (const char* f : {"config.echo", "history.csv", "model.ckpt"}) EXPECT_TRUE(fs::exists(dir / "run" / name / f));
  }
  EXPECT_EQ(loss_columns(dir / "run/c1/history.csv"), loss_columns(dir / "run/c2/history.csv"));
  EXPECT_EQ(train::read_config_echo(dir / "run/c1/config.echo"), train::read_config_echo(dir / "run/c2/config.echo"));
  EXPECT_EQ(slurp(dir / "run/c1/model.ckpt"), slurp(dir / "run/c2/model.ckpt"));
  const auto echo = train::read_config_echo(dir / "run/c1/config.echo");
  EXPECT_EQ(echo.at("unfrozen"), "true");
  EXPECT_EQ(echo.at("epochs"), "2");
}

TEST_F(Chain, EvaluateSegmentationAndClassifier) {
  const std::string w = dir.string();
  const auto s = invoke({"--workdir", w, "evaluate", "--checkpoint", "run/seg/model.ckpt", "--test",
                      "synthetic/seg_test.csv", "--out", "eval-seg"});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(slurp(dir / "eval-seg/report.csv").find("mean_dice,"), std::string::npos);
  const auto c = invoke({"--workdir", w, "evaluate", "--checkpoint", "run/clf-init/model.ckpt", "--test",
                      "synthetic/cls_test.csv", "--out", "eval-clf"});
  ASSERT_EQ(c.code, 0) << c.err;
  std::istringstream cm(slurp(dir / "eval-clf/cm.csv"));
  std::string header, row;
  std::getline(cm, header);
  std::getline(cm, row);
  EXPECT_EQ(header, "tp,fp,tn,fn");
  std::int64_t total = 0;
  std::stringstream fields(row);
  for (std::string v; std::getline(fields, v, ',');) total += std::stoll(v);
  EXPECT_EQ(total, static_cast<std::int64_t>(data::load_manifest(dir / "synthetic/cls_test.csv").size()));
  // Classifier checkpoint against a segmentation manifest.
  EXPECT_EQ(invoke({"--workdir", w, "evaluate", "--checkpoint", "run/clf-init/model.ckpt", "--test",
                 "synthetic/seg_test.csv"})
                .code,
            cli::kExitUsage);
  // Segmentation checkpoint where a classifier is required.
  EXPECT_EQ(invoke({"--workdir", w, "train-clf", "--init", "run/seg/model.ckpt", "--train", "synthetic/cls_train.csv"})
                .code,
            cli::kExitUsage);
}

TEST_F(Chain, GradcamWritesMapsInRange) {
  const std::string w = dir.string();
  const auto m = data::load_manifest(dir / "synthetic/cls_test.csv");
  const auto r = invoke({"--workdir", w, "gradcam", "--checkpoint", "run/clf-init/model.ckpt", "--image",
                      m.records[0].image_path.string(), "--image", m.records[1].image_path.string(), "--class",
                      "covid", "--csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (int i = 0; i < 2; ++i) {
    const std::string stem = m.records[i].image_path.stem().string();
    const fs::path png = dir / "gradcam" / (stem + "__cam_covid.png");
    ASSERT_TRUE(fs::exists(png));
    const Image overlay = read_image(png, ColorMode::kNative);
    EXPECT_EQ(overlay.channels, 3);
    EXPECT_EQ(overlay.width, 32);
    std::istringstream grid(slurp(dir / "gradcam" / (stem + "__cam_covid.csv")));
    int rows = 0;
    for (std::string line; std::getline(grid, line); ++rows) {
      std::stringstream fields(line);
      for (std::string v; std::getline(fields, v, ',');) {
        const double x = std::stod(v);
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
      }
    }
    EXPECT_EQ(rows, 32);
  }
  EXPECT_EQ(invoke({"--workdir", w, "gradcam", "--checkpoint", "run/clf-init/model.ckpt", "--image",
                 m.records[0].image_path.string(), "--class", "maybe"})
                .code,
            cli::kExitUsage);
  const auto gap = invoke({"--workdir", w, "gradcam", "--checkpoint", "run/clf-init/model.ckpt", "--image",
                        m.records[0].image_path.string(), "--layer", "gap"});
  EXPECT_NE(gap.code, 0);
  EXPECT_NE(gap.err.find("spatial"), std::string::npos);
}

TEST(Cli, PrepareDataPureSplit) {
  const auto dir = oracle::temp_dir("cli_pure");
  oracle::write_group_fixture(dir, {{"a", 10}, {"b", 5}}, 8, 1);
  const auto r = invoke({"--workdir", dir.string(), "prepare-data", "--manifest", "manifest.csv", "--size", "8",
                      "--train-fraction", "0.8", "--targets", "a=8,b=4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(fs::exists(dir / "prepared/augmented") && !fs::is_empty(dir / "prepared/augmented"));
  const auto train = data::load_manifest(dir / "prepared/train.csv");
  const auto counts = oracle::group_counts(train);
  EXPECT_EQ(counts.at("a"), 8u);
  EXPECT_EQ(counts.at("b"), 4u);
  EXPECT_EQ(slurp(dir / "prepared/summary.csv"),
            "group,samples,train,test,augmented_train\na,10,8,2,8\nb,5,4,1,4\ntotal,15,12,3,12\n");
  EXPECT_EQ(invoke({"--workdir", dir.string(), "prepare-data", "--manifest", "manifest.csv", "--targets", "zzz=3"}).code,
            cli::kExitUsage);
  EXPECT_EQ(invoke({"--workdir", dir.string(), "prepare-data", "--manifest", "manifest.csv", "--targets", "a=1"}).code,
            cli::kExitUsage);
}

TEST(Cli, PrepareDataScaledGroupCounts) {
  const auto dir = oracle::temp_dir("cli_groups");
  const std::vector<std::pair<std::string, int>> groups{
      {"chestxray14", 113}, {"bacterial", 3}, {"indiana", 4}, {"viral", 2}, {"covid", 5}};
  oracle::write_group_fixture(dir, groups, 8, 2);
  const double f = 3553.0 / 4603.0;
  std::map<std::string, std::size_t> expect_split, expect_final{{"bacterial", 5}, {"indiana", 5}, {"viral", 5},
                                                                {"covid", 10}};
  for (const auto& [g, n] : groups) expect_split[g] = static_cast<std::size_t>(std::floor(f * n + 0.5));
  expect_final["chestxray14"] = expect_split["chestxray14"];

  const std::vector<std::string> args{"--workdir", dir.string(), "prepare-data", "--manifest", "manifest.csv",
                                      "--size", "8", "--train-fraction", std::to_string(f), "--seed", "9",
                                      "--targets", "bacterial=5,indiana=5,viral=5,covid=10"};
  ASSERT_EQ(invoke(args).code, 0);
  const auto train = data::load_manifest(dir / "prepared/train.csv");
  const auto test = data::load_manifest(dir / "prepared/test.csv");
  EXPECT_EQ(oracle::group_counts(train), expect_final);
  std::set<std::string> originals;
  std::map<std::string, std::size_t> train_originals;
  for (const auto& r : train.records)
    if (r.image_path.parent_path().parent_path().filename() == "images") {
      originals.insert(r.image_path.string());
      ++train_originals[r.group()];
    }
  EXPECT_EQ(train_originals, expect_split);
  for (const auto& r : test.records) EXPECT_TRUE(originals.insert(r.image_path.string()).second) << "overlap";
  EXPECT_EQ(originals.size(), 127u);
  const std::string first = slurp(dir / "prepared/train.csv") + slurp(dir / "prepared/test.csv");
  ASSERT_EQ(invoke(args).code, 0);
  EXPECT_EQ(slurp(dir / "prepared/train.csv") + slurp(dir / "prepared/test.csv"), first);
}
