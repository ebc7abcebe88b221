#include <gtest/gtest.h>

#include <json.hpp>
#include <sstream>

#include "fixtures.hpp"
#include "skinet/cli.hpp"
#include "skinet/io_util.hpp"
#include "skinet/pipeline.hpp"

namespace fs = std::filesystem;
namespace st = skinet::testing;
using skinet::cli::run;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

/// SHA-256 of every file under root, keyed by relative path.
std::map<std::string, std::string> tree_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = skinet::io::sha256_file(e.path());
  }
  return out;
}

const std::vector<std::string> kSegSettings = {"--set", "segnet.input_size=32", "--set", "segnet.base_w=12",
                                               "--set", "segnet.res_filters=4",  "--set", "seg_train.epochs=2",
                                               "--set", "seg_train.batch_size=4"};
const std::vector<std::string> kClfSettings = {
    "--set", "classifier.backbone=desk_cnn", "--set", "classifier.input_size=32",
    "--set", "classifier.labels=MEL,NV,BCC", "--set", "classifier.dropout_positions=after_stages",
    "--set", "clf_train.epochs=2",           "--set", "clf_train.batch_size=6"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new st::TempDir("cli");
    st::write_segmentation_dataset(*dir_ / "segdata", st::ellipse_samples(10, 32, 1));
    st::write_classification_dataset(*dir_ / "clfdata", st::patch_samples(3, 4, 32, 2));
    const auto seg = call(concat({"train-seg", "--data", (*dir_ / "segdata").string(), "--out",
                                  (*dir_ / "seg").string(), "--seed", "3"},
                                 kSegSettings));
    ASSERT_EQ(seg.code, 0) << seg.err;
    const auto clf = call(concat({"train-clf", "--data", (*dir_ / "clfdata").string(), "--out",
                                  (*dir_ / "clf").string(), "--seed", "4"},
                                 kClfSettings));
    ASSERT_EQ(clf.code, 0) << clf.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static fs::path path(const std::string& name) { return *dir_ / name; }

  static std::vector<std::string> model_flags() {
    return {"--seg-checkpoint", path("seg/checkpoint").string(), "--clf-checkpoint", path("clf/checkpoint").string(),
            "--samples", "3", "--explainer", "gradcam"};
  }

  static st::TempDir* dir_;
};

st::TempDir* CliRun::dir_ = nullptr;

TEST(Cli, HelpExitsZero) {
  const auto r = call({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("train-seg"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"frobnicate"}).code, 2);
  const auto unknown_flag = call({"evaluate", "--out", "x", "--bogus"});
  EXPECT_EQ(unknown_flag.code, 2);
  EXPECT_FALSE(unknown_flag.err.empty());
  EXPECT_EQ(call({"infer", "--out", "x", "--explainer", "lime"}).code, 2);
  EXPECT_EQ(call({"infer", "--input", "x"}).code, 2);  // --out is required
}

TEST(Cli, UnknownConfigKeyIsNamed) {
  st::TempDir dir("clikey");
  const auto r = call({"evaluate", "--out", (dir / "o").string(), "--set", "pipeline.sed_threshold=0.2",
                       "--replay-counts", "1,2,3,4"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("pipeline.sed_threshold"), std::string::npos) << r.err;
  const auto bad_value = call({"evaluate", "--out", (dir / "o").string(), "--threshold-clf", "1.7",
                               "--replay-counts", "1,2,3,4"});
  EXPECT_EQ(bad_value.code, 2);
  const auto missing_config = call({"evaluate", "--out", (dir / "o").string(), "--config",
                                    (dir / "absent.txt").string(), "--replay-counts", "1,2,3,4"});
  EXPECT_EQ(missing_config.code, 2);
}

TEST(Cli, MissingCheckpointIsARuntimeFailure) {
  st::TempDir dir("clickpt");
  fs::create_directories(dir / "in");
  const auto r = call({"infer", "--out", (dir / "o").string(), "--input", (dir / "in").string(), "--seg-checkpoint",
                       (dir / "nope").string(), "--clf-checkpoint", (dir / "nope2").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope"), std::string::npos) << r.err;
}

TEST(Cli, ReplayedCountsReproduceTheReportedAccuracies) {
  st::TempDir dir("clireplay");
  const auto r = call({"evaluate", "--out", (dir / "o").string(), "--replay-counts", "skinet=1727,627,74,233",
                       "--replay-counts", "standalone=1602,722,76,261"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("diagnostic accuracy 73.65%"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("diagnostic accuracy 70.01%"), std::string::npos) << r.out;
  const auto summary = skinet::io::read_file(dir / "o" / "summary.txt");
  EXPECT_NE(summary.find("73.65%"), std::string::npos);
  EXPECT_NE(summary.find("70.01%"), std::string::npos);
  const auto json = nlohmann::json::parse(skinet::io::read_file(dir / "o" / "evaluation.json"));
  EXPECT_FALSE(json.empty());
  EXPECT_EQ(call({"evaluate", "--out", (dir / "p").string(), "--replay-counts", "1,2,x,4"}).code, 2);
}

TEST_F(CliRun, TrainingWritesCheckpointsMetricsAndManifests) {
  for (const char* part : {"seg", "clf"}) {
    EXPECT_TRUE(fs::exists(path(part) / "checkpoint"));
    EXPECT_TRUE(fs::exists(path(part) / "history.csv"));
    EXPECT_TRUE(fs::exists(path(part) / "run_manifest.txt"));
    const auto metrics = nlohmann::json::parse(skinet::io::read_file(path(part) / "metrics.json"));
    EXPECT_TRUE(metrics.contains("parameters"));
  }
  const auto manifest = skinet::KeyValues::load(path("seg") / "run_manifest.txt");
  EXPECT_EQ(manifest.get_string("run.checkpoint_sha256", ""), skinet::cli::checkpoint_hash(path("seg") / "checkpoint"));
  EXPECT_EQ(manifest.get_int("segnet.input_size", 0), 32);
}

TEST_F(CliRun, InferWritesValidReportsAndLeavesInputsAlone) {
  const auto input = path("clfdata") / "images";
  const auto before = tree_hashes(path("clfdata"));
  const auto out = path("infer1");
  const auto r = call(concat({"infer", "--input", input.string(), "--out", out.string(), "--seed", "9"}, model_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  int reports = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (!e.is_directory()) continue;
    const auto text = skinet::io::read_file(e.path() / "report.json");
    EXPECT_NO_THROW(skinet::pipeline::validate_report_json(text)) << e.path();
    ++reports;
  }
  EXPECT_EQ(reports, 12);
  EXPECT_EQ(tree_hashes(path("clfdata")), before);
}

TEST_F(CliRun, ManifestRerunIsByteIdentical) {
  const auto first = path("infer2");
  const auto r = call(concat({"infer", "--input", (path("clfdata") / "images").string(), "--out", first.string(),
                              "--seed", "11"},
                             model_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto second = path("infer2b");
  const auto again = call({"infer", "--config", (first / "run_manifest.txt").string(), "--out", second.string()});
  ASSERT_EQ(again.code, 0) << again.err;
  auto a = tree_hashes(first);
  auto b = tree_hashes(second);
  for (auto* m : {&a, &b}) {
    for (auto it = m->begin(); it != m->end();) {
      it = it->first.find("timings.json") != std::string::npos ? m->erase(it) : std::next(it);
    }
  }
  EXPECT_EQ(a, b);

  const auto eval1 = call(concat({"evaluate", "--data", path("clfdata").string(), "--out", path("eval1").string(),
                                  "--seed", "5"},
                                 model_flags()));
  ASSERT_EQ(eval1.code, 0) << eval1.err;
  const auto eval2 = call({"evaluate", "--config", (path("eval1") / "run_manifest.txt").string(), "--out",
                           path("eval2").string()});
  ASSERT_EQ(eval2.code, 0) << eval2.err;
  for (const char* f : {"evaluation.json", "evaluation.csv", "summary.txt"}) {
    EXPECT_EQ(skinet::io::read_file(path("eval1") / f), skinet::io::read_file(path("eval2") / f)) << f;
  }
}

TEST_F(CliRun, ChangedCheckpointIsDetectedOnRerun) {
  const auto first = path("infer3");
  ASSERT_EQ(call(concat({"infer", "--input", (path("clfdata") / "images" / "clf_000.png").string(), "--out",
                         first.string()},
                        model_flags()))
                .code,
            0);
  auto manifest = skinet::KeyValues::load(first / "run_manifest.txt");
  manifest.set("run.clf_checkpoint_sha256", std::string(64, '0'));
  skinet::io::write_file_atomic(path("tampered.txt"), manifest.to_string());
  const auto r = call({"infer", "--config", path("tampered.txt").string(), "--out", path("infer3b").string()});
  EXPECT_EQ(r.code, 1);
}

TEST_F(CliRun, ExplainAndBenchProduceTheirArtefacts) {
  const auto img = path("clfdata") / "images" / "clf_001.png";
  const auto r = call({"explain", "--clf-checkpoint", path("clf/checkpoint").string(), "--input", img.string(),
                       "--explainer", "gb", "--out", path("explain").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("explain") / "clf_001_gb_overlay.png"));
  EXPECT_TRUE(fs::exists(path("explain") / "clf_001_gb_heatmap.png"));
  EXPECT_TRUE(fs::exists(path("explain") / "clf_001_gb.npy"));
  EXPECT_EQ(call({"explain", "--clf-checkpoint", path("clf/checkpoint").string(), "--input", img.string(), "--class",
                  "DF", "--out", path("explain2").string()})
                .code,
            2);

  const auto b = call({"xai-bench", "--clf-checkpoint", path("clf/checkpoint").string(), "--data",
                       path("clfdata").string(), "--explainers", "gradcam,random", "--out", path("bench").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  const auto csv = skinet::io::read_file(path("bench") / "xai_bench.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 12);
}
