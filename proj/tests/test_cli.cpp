#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cpose/cli.hpp"

namespace fs = std::filesystem;
using cpose::cli::run;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cpose_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Cli, NoArgumentsIsUsageError) {
  const Result r = cli({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("synth"), std::string::npos);
}

TEST(Cli, HelpOnEverySubcommand) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  for (const char* sub : {"synth", "train", "eval", "gradcheck", "bench", "export"}) {
    const Result r = cli({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
}

TEST(Cli, MissingRequiredFlagPrintsSynopsis) {
  const Result r = cli({"train", "--out", "x"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--data"), std::string::npos);
  EXPECT_NE(r.err.find("--epochs"), std::string::npos);
}

TEST(Cli, BadValuesAreUsageErrors) {
  EXPECT_EQ(cli({"synth", "--out", "x", "--trajectory", "spiral"}).code, 1);
  EXPECT_EQ(cli({"bench", "--frames", "10"}).code, 1);
  EXPECT_EQ(cli({"gradcheck", "--precision", "half"}).code, 1);
}

TEST(Cli, RuntimeFailureExitsTwo) {
  const Result r = cli({"eval", "--ckpt", "/nonexistent/ck", "--data", "/nonexistent/data"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, GradcheckPasses) {
  const Result r = cli({"gradcheck", "--instances", "3"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("conv"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, SynthIsByteIdentical) {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  ASSERT_EQ(cli({"synth", "--seed", "4", "--frames", "6", "--size", "24", "--out", a.string()}).code, 0);
  ASSERT_EQ(cli({"synth", "--seed", "4", "--frames", "6", "--size", "24", "--threads", "3", "--out", b.string()}).code, 0);
  for (const auto& e : fs::directory_iterator(a)) {
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_EQ(slurp(a / "manifest.txt").substr(0, 8), "CPSD 1 6");
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, SynthWithAugmentation) {
  const fs::path d = scratch("synth_aug");
  ASSERT_EQ(cli({"synth", "--frames", "4", "--size", "16", "--augment", "2", "--out", d.string()}).code, 0);
  EXPECT_TRUE(fs::exists(d / "augmented_1" / "manifest.txt"));
  EXPECT_TRUE(fs::exists(d / "augmented_2" / "manifest.txt"));
  EXPECT_FALSE(fs::exists(d / "augmented_3"));
  fs::remove_all(d);
}

TEST(Cli, ConfigFileAndOverride) {
  const fs::path d = scratch("cfg_data"), cfg = scratch("cfg.txt");
  {
    std::ofstream os(cfg);
    os << "# dataset settings\nframes = 5\nsize = 16\nseed = 2\nout = " << d.string() << "\n";
  }
  Result r = cli({"synth", "--config", cfg.string(), "--frames", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 3 frames"), std::string::npos);
  EXPECT_EQ(cli({"synth", "--config", (cfg.string() + ".missing")}).code, 1);
  fs::remove_all(d);
  fs::remove(cfg);
}

TEST(Cli, TrainEvalExportPipeline) {
  const fs::path data = scratch("pipe_data"), out = scratch("pipe_out");
  ASSERT_EQ(cli({"synth", "--frames", "20", "--size", "32", "--augment", "1", "--out", data.string()}).code, 0);
  Result r = cli({"train", "--data", data.string(), "--out", out.string(), "--epochs", "2", "--batch", "8",
                  "--net", "scaled:8:32", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "checkpoint.cpck"));
  EXPECT_TRUE(fs::exists(out / "weights.cpsp"));
  const std::string log = slurp(out / "train_log.tsv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);

  r = cli({"eval", "--ckpt", (out / "checkpoint.cpck").string(), "--data", data.string(), "--subset", "val"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("rmse"), std::string::npos);

  // Bare weights need the network named, and give the same report.
  const Result w = cli({"eval", "--ckpt", (out / "weights.cpsp").string(), "--data", data.string(), "--subset",
                        "val", "--net", "scaled:8:32"});
  ASSERT_EQ(w.code, 0) << w.err;
  EXPECT_EQ(w.out, r.out);

  const fs::path csv = out / "pred.csv", svg = out / "pred.svg";
  ASSERT_EQ(cli({"eval", "--ckpt", (out / "checkpoint.cpck").string(), "--data", data.string(), "--report", "csv",
                 "--out", csv.string()})
                .code,
            0);
  ASSERT_EQ(cli({"export", "--traj", csv.string(), "--format", "svg", "--out", svg.string()}).code, 0);
  EXPECT_NE(slurp(svg).find("<svg"), std::string::npos);

  // Resuming for one more epoch appends to the log.
  r = cli({"train", "--data", data.string(), "--out", out.string(), "--epochs", "3", "--batch", "8", "--resume",
           (out / "checkpoint.cpck").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string log3 = slurp(out / "train_log.tsv");
  EXPECT_EQ(std::count(log3.begin(), log3.end(), '\n'), 3);
  EXPECT_EQ(log3.substr(0, log.size()), log);

  // Fine-tuning from the checkpoint loads every tensor.
  const fs::path ft = scratch("pipe_ft");
  r = cli({"train", "--data", data.string(), "--out", ft.string(), "--epochs", "1", "--batch", "8", "--net",
           "scaled:8:32", "--pretrained", (out / "checkpoint.cpck").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("0 kept their initialization"), std::string::npos) << r.out;
  fs::remove_all(data);
  fs::remove_all(out);
  fs::remove_all(ft);
}

TEST(Cli, BenchReportsStatistics) {
  const Result r = cli({"bench", "--size", "32", "--frames", "100", "--warmup", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* key : {"mean", "median", "stddev", "cv", "min", "max"}) {
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  }
}
