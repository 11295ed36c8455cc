#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cli.hpp"
#include "test_util.hpp"

using namespace tcgl;
using tcgl::testing::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tcgl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Scoped TCGL_SEED override.
struct SeedEnv {
  explicit SeedEnv(const char* v) {
    if (v) setenv("TCGL_SEED", v, 1);
    else unsetenv("TCGL_SEED");
  }
  ~SeedEnv() { unsetenv("TCGL_SEED"); }
};

/// Small model flags shared by the training tests.
std::vector<std::string> tiny_flags(const std::filesystem::path& data) {
  return {"--dataset", data.string(), "--l", "4", "--p", "2", "--n", "3", "--m", "2", "--feature_dim", "6", "--gcn_dim", "6",
          "--epochs", "2", "--batch_size", "3", "--val_fraction", "0.25"};
}

class CliRun : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(run_cli({"gen-data", "--out", (dir / "data").string(), "--count", "8", "--classes", "4", "--frames", "16", "--height", "4",
                       "--width", "4", "--seed", "3"})
                  .code,
              0);
  }

  Outcome train(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"train", "--out", (dir / out).string()};
    for (const auto& f : tiny_flags(dir / "data")) args.push_back(f);
    for (const auto& f : extra) args.push_back(f);
    return run_cli(args);
  }

  SeedEnv env{nullptr};
  TempDir dir;
};

}  // namespace

TEST(Config, TextRoundTrip) {
  TrainConfig cfg;
  cfg.lr = 0.0125;
  cfg.seed = 123456789012345ull;
  cfg.model.tau = 0.07;
  cfg.model.gate = GateActivation::sigmoid;
  cfg.dataset = "some/dir";
  EXPECT_EQ(config_to_text(config_from_text(config_to_text(cfg))), config_to_text(cfg));
  EXPECT_EQ(config_from_text(config_to_text(cfg)).model.tau, 0.07);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  TrainConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "learning_rate", "0.1"), std::invalid_argument);
  EXPECT_THROW(set_config_value(cfg, "lr", "fast"), std::invalid_argument);
  EXPECT_THROW(set_config_value(cfg, "epochs", "3.5"), std::invalid_argument);
  std::istringstream text("# comment\n\nepochs = 5\nbogus=1\n");
  try {
    apply_config_text(cfg, text, "run.cfg");
    FAIL() << "unknown key accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos) << e.what();
  }
  EXPECT_EQ(cfg.epochs, 5);
}

TEST(Config, ValidationNamesTheField) {
  TrainConfig cfg;
  cfg.model.layout.framesets = 3;
  try {
    cfg.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("m=3"), std::string::npos) << e.what();
  }
  cfg = TrainConfig{};
  cfg.model.p_r = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  const auto r = run_cli({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("gen-data"), std::string::npos);
}

TEST(Cli, UnknownFlagIsUsageError) {
  const auto r = run_cli({"gen-data", "--out", "x", "--colour", "red"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--colour"), std::string::npos) << r.err;
}

TEST(Cli, HelpExitsCleanly) {
  const auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("retrieve"), std::string::npos);
}

TEST_F(CliRun, GenDataWritesManifest) {
  const Dataset d = read_dataset(dir / "data");
  EXPECT_EQ(d.size(), 8u);
  EXPECT_EQ(d.seed, 3u);
  EXPECT_EQ(d.videos[0].frames, 16u);
}

TEST_F(CliRun, BadConfigValueIsInvalid) {
  const auto r = train("run", {"--tau", "-1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("tau"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(dir / "run"));
}

TEST_F(CliRun, MissingDatasetIsReported) {
  const auto r = run_cli({"train", "--out", (dir / "run").string(), "--dataset", (dir / "nowhere").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("nowhere"), std::string::npos) << r.err;
}

TEST_F(CliRun, TooShortVideosRejectedBeforeTraining) {
  const auto r = train("run", {"--l", "8"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("frames"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(dir / "run" / "metrics.csv"));
}

TEST_F(CliRun, TrainIsRepeatableAndEchoesConfig) {
  const auto a = train("a");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(train("b").code, 0);
  const std::string csv = slurp(dir / "a" / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
  EXPECT_EQ(csv, slurp(dir / "b" / "metrics.csv"));
  const TrainConfig echoed = config_from_text(slurp(dir / "a" / "config.cfg"));
  EXPECT_EQ(echoed.epochs, 2);
  EXPECT_EQ(echoed.model.layout.length, 4u);
  EXPECT_NE(a.out.find("# resolved configuration"), std::string::npos);
  EXPECT_NE(a.out.find(config_to_text(echoed)), std::string::npos);
}

TEST_F(CliRun, EvalOrderMatchesLastValidation) {
  ASSERT_EQ(train("run").code, 0);
  const auto r = run_cli({"eval-order", "--ckpt", (dir / "run" / "last").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = load_checkpoint<double>(dir / "run" / "last");
  EXPECT_NE(r.out.find("accuracy=" + detail::format_double(ck.history.back().val_acc)), std::string::npos) << r.out;
  EXPECT_EQ(run_cli({"eval-order", "--ckpt", (dir / "run" / "last").string(), "--split", "sideways"}).code, 1);
  EXPECT_EQ(run_cli({"eval-order", "--ckpt", (dir / "missing").string()}).code, 2);
}

TEST_F(CliRun, RetrieveWritesTopKColumns) {
  ASSERT_EQ(train("run").code, 0);
  ASSERT_EQ(run_cli({"gen-data", "--out", (dir / "queries").string(), "--count", "6", "--classes", "4", "--frames", "16", "--height",
                     "4", "--width", "4", "--seed", "11"})
                .code,
            0);
  const auto r = run_cli({"retrieve", "--ckpt", (dir / "run" / "best").string(), "--queries", (dir / "queries").string(), "--out",
                          (dir / "topk.csv").string(), "--plot-data", (dir / "plot.csv").string(), "--save-gallery",
                          (dir / "emb").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir / "topk.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "top1,top5,top10,top20,top50");
  EXPECT_EQ(load_gallery<double>(dir / "emb" / "gallery").size(), 6u);
  EXPECT_EQ(load_gallery<double>(dir / "emb" / "queries").size(), 6u);
  EXPECT_TRUE(std::filesystem::exists(dir / "plot.csv"));
  EXPECT_EQ(run_cli({"retrieve", "--ckpt", (dir / "run" / "best").string(), "--k", "0"}).code, 1);
}

TEST_F(CliRun, ResumeViaFlags) {
  ASSERT_EQ(train("whole").code, 0);
  ASSERT_EQ(train("parts", {"--stop-after", "1"}).code, 0);
  ASSERT_EQ(train("parts", {"--resume", (dir / "parts" / "last").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "parts" / "metrics.csv"), slurp(dir / "whole" / "metrics.csv"));
}

TEST_F(CliRun, SinglePrecisionRun) {
  const auto r = train("f32", {"--precision", "32"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(archive_dtype(dir / "f32" / "last"), "f32");
  EXPECT_EQ(run_cli({"eval-order", "--ckpt", (dir / "f32" / "last").string()}).code, 0);
}

TEST_F(CliRun, SeedPrecedence) {
  {
    SeedEnv e("41");
    ASSERT_EQ(train("env").code, 0);
    EXPECT_EQ(config_from_text(slurp(dir / "env" / "config.cfg")).seed, 41u);
  }
  std::ofstream(dir / "file.cfg") << "seed=42\n";
  {
    SeedEnv e("41");
    ASSERT_EQ(train("file", {"--config", (dir / "file.cfg").string()}).code, 0);
    EXPECT_EQ(config_from_text(slurp(dir / "file" / "config.cfg")).seed, 42u);
    ASSERT_EQ(train("flag", {"--config", (dir / "file.cfg").string(), "--seed", "43"}).code, 0);
    EXPECT_EQ(config_from_text(slurp(dir / "flag" / "config.cfg")).seed, 43u);
  }
  ASSERT_EQ(train("default").code, 0);
  EXPECT_EQ(config_from_text(slurp(dir / "default" / "config.cfg")).seed, 7u);
}

TEST_F(CliRun, GenDataSeedFallsBackToEnvironment) {
  SeedEnv e("19");
  ASSERT_EQ(run_cli({"gen-data", "--out", (dir / "envdata").string(), "--count", "2", "--frames", "16", "--height", "4", "--width", "4"})
                .code,
            0);
  EXPECT_EQ(read_dataset(dir / "envdata").seed, 19u);
}

TEST(Cli, GradcheckPasses) {
  TempDir dir;
  const auto r = run_cli({"gradcheck", "--out", (dir / "report").string()});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("all checks passed"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "report" / "report.csv"));
}
