#include <gtest/gtest.h>

#include <set>

#include "helpers.hpp"
#include "semcd/semcd.hpp"

using namespace semcd;
using testing_util::read_file;
using testing_util::run_cli;
using testing_util::TempDir;

namespace {

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::string toy_config() { return std::string(SEMCD_SOURCE_DIR) + "/configs/toy.json"; }

/// Toy data plus a briefly trained checkpoint, built once for the suite.
class CliSuite : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("semcd-cli-suite");
    auto made = run_cli("make-toy-data --out " + q(data()));
    ASSERT_EQ(made.exit_code, 0) << made.output;
    auto trained = run_cli("train --config " + q(toy_config()) + " --data " + q(data()) + " --out " + q(ckpts()) +
                           " --stage both --steps 4");
    ASSERT_EQ(trained.exit_code, 0) << trained.output;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static std::filesystem::path data() { return *dir_ / "data"; }
  static std::filesystem::path ckpts() { return *dir_ / "ckpt"; }
  static std::filesystem::path scd_ckpt() { return ckpts() / "scd.ckpt"; }

  static TempDir* dir_;
};

TempDir* CliSuite::dir_ = nullptr;

}  // namespace

TEST_F(CliSuite, HelpAndUsageExitCodes) {
  EXPECT_EQ(run_cli("--help").exit_code, 0);
  EXPECT_EQ(run_cli("train --help").exit_code, 0);
  EXPECT_EQ(run_cli("").exit_code, 2);
  EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
  EXPECT_EQ(run_cli("make-toy-data").exit_code, 2);
  EXPECT_EQ(run_cli("train --data " + q(data())).exit_code, 2);
  EXPECT_EQ(run_cli("train --data " + q(data()) + " --out /tmp/x --stage middle").exit_code, 2);
}

TEST_F(CliSuite, ScdStageNeedsCheckpoint) {
  TempDir out;
  auto r = run_cli("train --config " + q(toy_config()) + " --data " + q(data()) + " --out " + q(out.path()) +
                   " --stage scd");
  EXPECT_EQ(r.exit_code, 2) << r.output;
  EXPECT_NE(r.output.find("--checkpoint"), std::string::npos);
}

TEST_F(CliSuite, BadOverrideAndMissingData) {
  TempDir out;
  auto bad_set = run_cli("train --config " + q(toy_config()) + " --data " + q(data()) + " --out " + q(out.path()) +
                         " --set stages.bcd.epochs=-3");
  EXPECT_EQ(bad_set.exit_code, 2) << bad_set.output;
  auto no_key = run_cli("train --config " + q(toy_config()) + " --data " + q(data()) + " --out " + q(out.path()) +
                        " --set not_a_pair");
  EXPECT_EQ(no_key.exit_code, 2) << no_key.output;
  auto missing = run_cli("eval --gt-stub --data " + q(out / "nope") + " --out " + q(out / "m.json"));
  EXPECT_EQ(missing.exit_code, 2) << missing.output;
  auto bad_cfg = run_cli("train --config " + q(out / "absent.json") + " --data " + q(data()) + " --out " +
                         q(out.path()));
  EXPECT_EQ(bad_cfg.exit_code, 2) << bad_cfg.output;
}

TEST_F(CliSuite, CorruptCheckpointIsRuntimeFailure) {
  TempDir out;
  {
    std::ofstream f(out / "bad.ckpt", std::ios::binary);
    f << "definitely not a checkpoint";
  }
  auto r = run_cli("eval --checkpoint " + q(out / "bad.ckpt") + " --data " + q(data()) + " --out " +
                   q(out / "m.json"));
  EXPECT_EQ(r.exit_code, 1) << r.output;
  EXPECT_FALSE(std::filesystem::exists(out / "m.json"));
}

TEST_F(CliSuite, VocabularyMismatchIsRuntimeFailure) {
  TempDir out;
  ClassVocabulary({"no change", "road", "river"}).save(out / "vocab.json");
  auto r = run_cli("eval --checkpoint " + q(scd_ckpt()) + " --data " + q(data()) + " --vocab " +
                   q(out / "vocab.json") + " --out " + q(out / "m.json"));
  EXPECT_EQ(r.exit_code, 1) << r.output;
}

TEST_F(CliSuite, ToyDataIsByteIdenticalOnRerun) {
  TempDir out;
  ASSERT_EQ(run_cli("make-toy-data --out " + q(out / "again")).exit_code, 0);
  std::set<std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(data()))
    if (e.is_regular_file()) files.insert(std::filesystem::relative(e.path(), data()).string());
  ASSERT_FALSE(files.empty());
  for (const auto& rel : files) EXPECT_TRUE(testing_util::same_bytes(data() / rel, out / "again" / rel)) << rel;
}

TEST_F(CliSuite, GtStubMetricsSchema) {
  TempDir out;
  auto r = run_cli("eval --gt-stub --data " + q(data()) + " --out " + q(out / "metrics.json"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  auto j = nlohmann::json::parse(read_file(out / "metrics.json"));
  EXPECT_EQ(j.size(), 7u);
  for (const char* key : {"oa", "f1", "miou", "sek"}) EXPECT_DOUBLE_EQ(j.at(key).get<double>(), 100.0) << key;
  EXPECT_EQ(j.at("samples").get<int>(), 8);
  EXPECT_EQ(j.at("pixels").get<long>(), 8L * 64 * 64);
  EXPECT_EQ(j.at("vocabulary").size(), 7u);
}

TEST_F(CliSuite, EvalWritesMetricsForCheckpoint) {
  TempDir out;
  auto r = run_cli("eval --checkpoint " + q(scd_ckpt()) + " --data " + q(data()) + " --out " +
                   q(out / "metrics.json"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  auto j = nlohmann::json::parse(read_file(out / "metrics.json"));
  EXPECT_EQ(j.size(), 7u);
  EXPECT_NE(r.output.find("SeK"), std::string::npos);
}

TEST_F(CliSuite, PredictWritesImagesWithinVocabulary) {
  TempDir out;
  auto manifest = load_second_directory(data(), ClassVocabulary::second());
  const auto id = manifest.sample_ids.front();
  auto r = run_cli("predict --checkpoint " + q(scd_ckpt()) + " --data " + q(data()) + " --out " +
                   q(out / "p") + " --id " + id);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  for (const char* suffix : {"_bcd.png", "_sem1.png", "_sem2.png", "_overlay.png"})
    EXPECT_TRUE(std::filesystem::exists(out / "p" / (id + suffix))) << suffix;
  for (const char* suffix : {"_sem1.png", "_sem2.png"}) {
    auto m = png::read_gray(out / "p" / (id + suffix));
    EXPECT_EQ(m.height, 64);
    for (auto v : m.data) EXPECT_LT(v, 7);
  }
  auto bcd = png::read_gray(out / "p" / (id + "_bcd.png"));
  for (auto v : bcd.data) EXPECT_TRUE(v == 0 || v == 255);

  auto plain = run_cli("predict --checkpoint " + q(scd_ckpt()) + " --data " + q(data()) + " --out " +
                       q(out / "n") + " --id " + id + " --no-overlay");
  ASSERT_EQ(plain.exit_code, 0) << plain.output;
  int pngs = 0;
  for (const auto& e : std::filesystem::directory_iterator(out / "n")) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 3);

  auto unknown = run_cli("predict --checkpoint " + q(scd_ckpt()) + " --data " + q(data()) + " --out " +
                         q(out / "u") + " --id nosuchsample");
  EXPECT_EQ(unknown.exit_code, 2);
}

TEST_F(CliSuite, ConfigFromEnvironment) {
  TempDir out;
  auto r = run_cli("train --data " + q(data()) + " --out " + q(out.path()) + " --stage bcd --steps 2",
                   std::string(kConfigEnvVar) + "=" + q(toy_config()));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  auto ck = load_checkpoint(out / "bcd.ckpt");
  EXPECT_TRUE(ck.has_stage("bcd"));
  EXPECT_EQ(ck.config.at("run_seed").get<int>(), 7);
}

TEST_F(CliSuite, StepsCapAndJsonLog) {
  TempDir out;
  auto r = run_cli("train --config " + q(toy_config()) + " --data " + q(data()) + " --out " + q(out.path()) +
                   " --stage bcd --steps 3 --set seed=11");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  std::istringstream log(read_file(out / "train_log.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("stage"), "bcd");
    EXPECT_TRUE(std::isfinite(j.at("loss").get<double>()));
    ++n;
  }
  EXPECT_EQ(n, 3);
}
