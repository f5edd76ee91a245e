#pragma once

// train / eval / analyze / sweep over a RunConfig. Every run owns
// <output_dir>/run-<config hash>/ while it holds run.lock; all files are
// written atomically.

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "atfs/harness/config.hpp"
#include "atfs/training.hpp"

namespace atfs::harness {

class RunLocked : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exclusive ownership of a run directory via an O_EXCL lock file holding the
// owner's pid. Released on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

// metrics.csv: epoch,lr,L_adv,L_FS,val_clean_acc,val_robust_acc with every
// value printed so that it reads back to the same double.
std::string metrics_csv(const std::vector<EpochMetrics>& history);
std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

struct TrainOutcome {
  std::filesystem::path dir;
  TrainResult result;
};

// Writes config.json, metrics.csv (refreshed after each epoch), best.{bin,json},
// last.{bin,json} and train.json.
TrainOutcome run_train(const RunConfig& cfg, std::ostream* log = nullptr);

// Evaluates a checkpoint (default: the run's best) on cfg.eval and writes
// report.json. Returns the report document.
nlohmann::json run_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint = {},
                        std::ostream* log = nullptr);

// Writes similarity.csv, similarity_adv.csv, similarity.pgm, features_2d.csv,
// features_raw.csv, thickness.json and analysis.json. Returns analysis.json.
nlohmann::json run_analyze(const RunConfig& cfg, const std::filesystem::path& checkpoint = {},
                           std::ostream* log = nullptr);

// One grid axis, "key=v1,v2,...". `key` is a dotted config path; lambda_fs,
// eta1, eta2, variant and seed are shorthands for their train.* / top-level
// fields.
struct SweepAxis {
  std::string key;
  std::vector<nlohmann::json> values;
};
SweepAxis parse_grid(const std::string& spec);

// Runs train + eval + analyze for every grid point and writes sweep.csv into
// <output_dir>/sweep-<hash>/. Returns the path of sweep.csv.
std::filesystem::path run_sweep(const RunConfig& base, const std::vector<SweepAxis>& grid,
                                 std::ostream* log = nullptr);

}  // namespace atfs::harness
