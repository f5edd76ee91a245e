// atfs-lab: train, evaluate, analyze and sweep runs described by a JSON config.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "atfs/checkpoint.hpp"
#include "atfs/harness/config.hpp"
#include "atfs/harness/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kFailed = 1, kBadConfig = 2, kLocked = 3, kNoData = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run config (JSON, schema v1)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed for model init, training, eval and analysis");
  cmd->add_option("--out", c.out, "output directory (overrides output_dir)");
  cmd->add_option("--set", c.overrides, "override a config field, e.g. train.lambda_fs=0.1");
}

atfs::harness::RunConfig load(const Common& c) {
  std::vector<std::string> overrides = c.overrides;
  if (!c.out.empty()) overrides.push_back("output_dir=" + nlohmann::json(c.out).dump());
  return atfs::harness::load_run_config(c.config, overrides, c.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial training with a feature-separability term"};
  app.name("atfs-lab");
  app.require_subcommand(1);

  Common train_opts, eval_opts, analyze_opts, sweep_opts;
  std::string eval_ckpt, analyze_ckpt;
  std::vector<std::string> grid;

  auto* train_cmd = app.add_subcommand("train", "train a model; writes metrics.csv and checkpoints");
  add_common(train_cmd, train_opts);
  auto* eval_cmd = app.add_subcommand("eval", "robust accuracy of a checkpoint; writes report.json");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint stem (default: <run dir>/best)");
  auto* analyze_cmd = app.add_subcommand("analyze", "similarity, thickness and feature exports");
  add_common(analyze_cmd, analyze_opts);
  analyze_cmd->add_option("--checkpoint", analyze_ckpt, "checkpoint stem (default: <run dir>/best)");
  auto* sweep_cmd = app.add_subcommand("sweep", "train/eval/analyze over a grid; writes sweep.csv");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--grid", grid, "axis key=v1,v2,... (repeatable)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadConfig;
  }

  using namespace atfs::harness;
  try {
    if (*train_cmd) {
      const RunConfig cfg = load(train_opts);
      std::cout << run_train(cfg, &std::cerr).dir.string() << "\n";
    } else if (*eval_cmd) {
      const RunConfig cfg = load(eval_opts);
      run_eval(cfg, eval_ckpt, &std::cerr);
      std::cout << (run_dir(cfg) / "report.json").string() << "\n";
    } else if (*analyze_cmd) {
      const RunConfig cfg = load(analyze_opts);
      run_analyze(cfg, analyze_ckpt, &std::cerr);
      std::cout << run_dir(cfg).string() << "\n";
    } else {
      const RunConfig cfg = load(sweep_opts);
      std::vector<SweepAxis> axes;
      for (const std::string& g : grid) axes.push_back(parse_grid(g));
      std::cout << run_sweep(cfg, axes, &std::cerr).string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "atfs-lab: invalid config: " << e.what() << "\n";
    return kBadConfig;
  } catch (const RunLocked& e) {
    std::cerr << "atfs-lab: " << e.what() << "\n";
    return kLocked;
  } catch (const DataError& e) {
    std::cerr << "atfs-lab: " << e.what() << "\n";
    return kNoData;
  } catch (const std::exception& e) {
    std::cerr << "atfs-lab: " << e.what() << "\n";
    return kFailed;
  }
  return kOk;
}
