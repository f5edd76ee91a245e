#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "atfs/io.hpp"

namespace {

struct Result {
  int status = -1;
  std::string output;  // stdout and stderr
};

Result run(const std::string& args) {
  const std::string cmd = std::string(ATFS_LAB_BINARY) + " " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.output.append(buf.data(), n);
  const int raw = ::pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("atfs-cli-" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

const char* kTinyConfig = R"({
  "seed": 1,
  "dataset": {"name": "synthetic-gaussians", "train": 40, "val": 10, "test": 10, "classes": 2},
  "model": {"architecture": "mlp", "hidden": 8, "depth": 1, "feature_dim": 4},
  "train": {"epochs": 2, "batch_size": 10, "milestones": [1], "lambda_fs": 0.1,
            "attack": {"epsilon": 0.05, "step_size": 0.02, "steps": 2},
            "selection_attack": {"epsilon": 0.05, "step_size": 0.02, "steps": 2}},
  "analysis": {"pairs": 5, "segment_points": 16}
})";

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

TEST(Cli, RequiresASubcommand) {
  EXPECT_NE(run("").status, 0);
  EXPECT_EQ(run("--help").status, 0);
  EXPECT_EQ(run("fly --config x").status, 2);
}

TEST(Cli, InvalidConfigNamesTheField) {
  const auto dir = scratch("invalid");
  atfs::io::write_file_atomic(dir / "cfg.json", R"({"train": {"lambda_fs": "lots"}})");
  const Result r = run("train --config " + (dir / "cfg.json").string() + " --out " + dir.string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("/train/lambda_fs"), std::string::npos) << r.output;

  const Result s = run("train --config " + (dir / "cfg.json").string() + " --set train.lambda_fs=0.1" +
                       " --set model.depth=-1 --out " + dir.string());
  EXPECT_EQ(s.status, 2);
  EXPECT_NE(s.output.find("/model/depth"), std::string::npos) << s.output;
}

TEST(Cli, MissingDataExitsWithDataError) {
  const auto dir = scratch("nodata");
  atfs::io::write_file_atomic(dir / "cfg.json", R"({"dataset": {"name": "cifar10-subset"}})");
  const std::string env = "ATFS_DATA_DIR=" + (dir / "none").string() + " ";
  const std::string cmd = env + ATFS_LAB_BINARY + " train --config " + (dir / "cfg.json").string() +
                          " --out " + dir.string() + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(raw), 4);
}

TEST(Cli, TrainEvalAnalyzeSweep) {
  const auto dir = scratch("flow");
  const auto cfg = (dir / "cfg.json").string();
  atfs::io::write_file_atomic(cfg, kTinyConfig);
  const std::string common = " --config " + cfg + " --out " + (dir / "runs").string();

  const Result t = run("train" + common);
  ASSERT_EQ(t.status, 0) << t.output;
  const std::filesystem::path run_dir = trim(t.output.substr(t.output.rfind('\n', t.output.size() - 2) + 1));
  EXPECT_TRUE(std::filesystem::exists(run_dir / "metrics.csv")) << run_dir;

  const Result e = run("eval" + common);
  ASSERT_EQ(e.status, 0) << e.output;
  EXPECT_TRUE(std::filesystem::exists(run_dir / "report.json"));
  const Result a = run("analyze" + common);
  ASSERT_EQ(a.status, 0) << a.output;
  EXPECT_TRUE(std::filesystem::exists(run_dir / "thickness.json"));

  // A different seed is a different run.
  const Result t2 = run("train" + common + " --seed 9");
  ASSERT_EQ(t2.status, 0);
  EXPECT_EQ(t2.output.find(run_dir.string()), std::string::npos);

  const Result s = run("sweep" + common + " --grid lambda_fs=0.05,0.1");
  ASSERT_EQ(s.status, 0) << s.output;
  const std::string csv = atfs::io::read_file(trim(s.output.substr(s.output.rfind('\n', s.output.size() - 2) + 1)));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Cli, LockedRunDirectoryIsRefused) {
  const auto dir = scratch("locked");
  const auto cfg = (dir / "cfg.json").string();
  atfs::io::write_file_atomic(cfg, kTinyConfig);
  const std::string common = " --config " + cfg + " --out " + (dir / "runs").string();
  const Result first = run("train" + common);
  ASSERT_EQ(first.status, 0);
  const std::filesystem::path run_dir =
      trim(first.output.substr(first.output.rfind('\n', first.output.size() - 2) + 1));
  atfs::io::write_file_atomic(run_dir / "run.lock", "12345");
  const Result second = run("train" + common);
  EXPECT_EQ(second.status, 3);
  EXPECT_NE(second.output.find("12345"), std::string::npos);
}
