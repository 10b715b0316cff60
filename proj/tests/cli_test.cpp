#include <cmath>
#include <filesystem>
#include <limits>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "calign/cli.hpp"
#include "calign/io.hpp"

namespace calign {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string str(const fs::path& p) { return p.string(); }

std::vector<std::string> with_out(std::vector<std::string> args, const fs::path& out) {
  args.push_back("--out");
  args.push_back(str(out));
  return args;
}

void expect_same_outputs(const fs::path& a, const fs::path& b) {
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    if (name == "manifest.json") continue;
    ASSERT_TRUE(fs::exists(b / name)) << name;
    EXPECT_EQ(read_text(entry.path()), read_text(b / name)) << name;
    ++compared;
  }
  EXPECT_GT(compared, 0);
}

class CliPipeline : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "calign_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::vector<std::vector<std::string>> steps = {
        {"synth", "--seed", "5", "--instances", "240", "--modalities", "3", "--embed-dim", "8", "--raw-dim", "12",
         "--out", str(root / "world")},
        {"fit", "--seed", "5", "--world", str(root / "world"), "--iters", "15", "--out", str(root / "fit")},
        {"impute", "--seed", "5", "--world", str(root / "world"), "--params", str(root / "fit/params.json"), "--out",
         str(root / "impute")},
        {"diagnose", "--seed", "5", "--world", str(root / "world"), "--params", str(root / "fit/params.json"),
         "--trials", "60", "--out", str(root / "diagnose")},
        {"train", "--seed", "5", "--world", str(root / "world"), "--epochs", "2", "--batch-size", "32", "--matching",
         "true", "--out", str(root / "train")},
        {"report", "--from", str(root / "impute"), str(root / "diagnose"), str(root / "train"), "--out",
         str(root / "report")},
    };
    for (const auto& step : steps) {
      const Outcome o = run_cli(step);
      ASSERT_EQ(o.code, cli::kExitOk) << step[0] << ": " << o.err;
    }
    write_text(root / "stack.txt", "2,2\n1,0.6\n0,0.8\n");
    write_text(root / "stack2.txt", "2,2\n0,1\n1,0\n");
    write_text(root / "head.json", R"({"weight":[0.5,-0.25],"bias":0.1})");
    const Outcome o = run_cli({"eval-loss", "--stack", str(root / "stack.txt"), str(root / "stack2.txt"), "--head",
                               str(root / "head.json"), "--out", str(root / "loss")});
    ASSERT_EQ(o.code, cli::kExitOk) << o.err;
  }
};

fs::path CliPipeline::root;

TEST_F(CliPipeline, SynthIsByteIdenticalAcrossRuns) {
  const Outcome o = run_cli({"synth", "--seed", "5", "--instances", "240", "--modalities", "3", "--embed-dim", "8",
                             "--raw-dim", "12", "--out", str(root / "world_again")});
  ASSERT_EQ(o.code, cli::kExitOk) << o.err;
  expect_same_outputs(root / "world", root / "world_again");
}

TEST_F(CliPipeline, EveryCommandReplaysFromItsManifest) {
  for (const char* dir : {"world", "fit", "impute", "diagnose", "train", "report", "loss"}) {
    SCOPED_TRACE(dir);
    const Json manifest = Json::parse(read_text(root / dir / "manifest.json"));
    const std::string command = manifest.at("command");
    const Outcome o =
        run_cli({command, "--manifest", str(root / dir / "manifest.json"), "--out", str(root / (std::string(dir) + "_replay"))});
    ASSERT_EQ(o.code, cli::kExitOk) << o.err;
    expect_same_outputs(root / dir, root / (std::string(dir) + "_replay"));
    const Json replay = Json::parse(read_text(root / (std::string(dir) + "_replay") / "manifest.json"));
    EXPECT_EQ(replay.at("seed"), manifest.at("seed"));
    EXPECT_EQ(replay.at("version"), cli::kVersion);
  }
}

TEST_F(CliPipeline, FitTraceNeverDecreases) {
  const std::string trace = read_text(root / "fit/trace.csv");
  std::istringstream lines(trace);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "iteration,loglik,delta");
  double previous = -std::numeric_limits<double>::infinity();
  int rows = 0;
  while (std::getline(lines, line)) {
    const double loglik = std::stod(line.substr(line.find(',') + 1));
    EXPECT_GE(loglik, previous - 1e-9 * std::abs(previous));
    previous = loglik;
    ++rows;
  }
  EXPECT_GT(rows, 1);
}

TEST_F(CliPipeline, DiagnoseReportsNoBoundViolations) {
  const Json summary = Json::parse(read_text(root / "diagnose/shift_summary.json"));
  EXPECT_EQ(summary.at("bound_violations"), 0);
  EXPECT_GT(summary.at("reports").get<int>(), 0);
  std::istringstream lines(read_text(root / "diagnose/anchor_reports.jsonl"));
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const Json r = Json::parse(line);
    if (!r.at("near_degenerate").get<bool>()) {
      EXPECT_GE(r.at("delta").get<double>(), r.at("lower_bound").get<double>() - 1e-12);
      if (!r.at("upper_bound").is_null()) EXPECT_LE(r.at("delta").get<double>(), r.at("upper_bound").get<double>() + 1e-12);
    }
    ++count;
  }
  EXPECT_EQ(count, summary.at("reports").get<int>());
}

TEST_F(CliPipeline, ReportTablesExist) {
  for (const char* name : {"imputation.csv", "anchor_shift.csv", "training.csv", "summary.json"})
    EXPECT_TRUE(fs::exists(root / "report" / name)) << name;
  const Json loss = Json::parse(read_text(root / "loss/loss.json"));
  EXPECT_FALSE(loss.at("matching_term").is_null());
}

TEST_F(CliPipeline, FlagsOverrideConfigValues) {
  write_text(root / "config.json", R"({"iters": 3, "pattern": "full", "world": ")" + str(root / "world") + "\"}");
  const Outcome o = run_cli({"fit", "--config", str(root / "config.json"), "--iters", "2", "--out", str(root / "fit_config")});
  ASSERT_EQ(o.code, cli::kExitOk) << o.err;
  const Json manifest = Json::parse(read_text(root / "fit_config/manifest.json"));
  EXPECT_EQ(manifest.at("config").at("iters"), "2");
  EXPECT_EQ(manifest.at("config").at("pattern"), "full");
  EXPECT_LE(Json::parse(read_text(root / "fit_config/fit.json")).at("iterations").get<int>(), 2);
}

TEST_F(CliPipeline, ManifestFromAnotherCommandIsAUsageError) {
  const Outcome o = run_cli({"impute", "--manifest", str(root / "fit/manifest.json"), "--out", str(root / "x")});
  EXPECT_EQ(o.code, cli::kExitUsage);
}

TEST_F(CliPipeline, StreamsCarryNoTimestamps) {
  const std::regex stamp(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2})");
  const Outcome ok = run_cli({"fit", "--world", str(root / "world"), "--iters", "2", "--out", str(root / "fit_stamp")});
  const Outcome bad = run_cli({"fit", "--world", str(root / "absent"), "--out", str(root / "fit_stamp")});
  for (const Outcome& o : {ok, bad}) {
    EXPECT_FALSE(std::regex_search(o.out, stamp));
    EXPECT_FALSE(std::regex_search(o.err, stamp));
  }
}

Json error_payload(const Outcome& o) {
  const Json j = Json::parse(o.err);
  EXPECT_EQ(j.at("exit_code"), o.code);
  EXPECT_TRUE(j.contains("error"));
  EXPECT_TRUE(j.contains("message"));
  return j;
}

TEST(CliExitCodes, UsageErrors) {
  const fs::path dir = fs::temp_directory_path() / "calign_cli_exit";
  EXPECT_EQ(run_cli({"synth", "--no-such-flag"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"no-such-command"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({}).code, cli::kExitUsage);
  const Outcome missing = run_cli(with_out({"fit", "--world", str(dir / "absent")}, dir / "o"));
  EXPECT_EQ(missing.code, cli::kExitUsage);
  error_payload(missing);
  write_text(dir / "config.json", R"({"bogus": 1})");
  const Outcome unknown = run_cli(with_out({"synth", "--config", str(dir / "config.json")}, dir / "o"));
  EXPECT_EQ(unknown.code, cli::kExitUsage);
  error_payload(unknown);
  fs::remove_all(dir);
}

TEST(CliExitCodes, ComputationErrors) {
  const fs::path dir = fs::temp_directory_path() / "calign_cli_exit3";
  write_text(dir / "bad.txt", "2,2\n2,0\n0,1\n");
  const Outcome o = run_cli(with_out({"eval-loss", "--stack", str(dir / "bad.txt")}, dir / "o"));
  EXPECT_EQ(o.code, cli::kExitComputation);
  EXPECT_EQ(error_payload(o).at("error"), "invalid_input");
  const Outcome spec = run_cli(with_out({"synth", "--latent-dim", "9", "--embed-dim", "8"}, dir / "w"));
  EXPECT_EQ(spec.code, cli::kExitComputation);
  fs::remove_all(dir);
}

TEST(CliExitCodes, HelpAndVersionSucceed) {
  EXPECT_EQ(run_cli({"--help"}).code, cli::kExitOk);
  const Outcome v = run_cli({"--version"});
  EXPECT_EQ(v.code, cli::kExitOk);
  EXPECT_NE(v.out.find(cli::kVersion), std::string::npos);
}

}  // namespace
}  // namespace calign
