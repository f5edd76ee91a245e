#pragma once

// Run configuration, schema version 1 (schemas/config.v1.schema.json).
// Every key is optional and falls back to its default; unknown keys are
// rejected. Errors carry the JSON pointer of the offending field.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "atfs/analysis.hpp"
#include "atfs/attacks.hpp"
#include "atfs/harness/datasets.hpp"
#include "atfs/harness/models.hpp"
#include "atfs/training.hpp"

namespace atfs::harness {

inline constexpr int kConfigSchemaVersion = 1;

struct EvalSpec {
  std::vector<AttackSpec> suite = default_eval_suite();
  std::string split = "test";
};

struct AnalysisSpec {
  ThicknessConfig thickness;
  // Attack crafting the adversarial nodes of the exported features.
  AttackConfig feature_attack{8.0 / 255.0, 2.0 / 255.0, 10, false, AttackLoss::kCrossEntropy};
  std::string split = "test";
  std::size_t max_samples = 0;  // 0: the whole split
};

struct RunConfig {
  // Drives model init, training, evaluation and analysis; the dataset has its
  // own seed so the splits stay fixed across training seeds.
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  ModelSpec model;
  TrainConfig train;
  EvalSpec eval;
  AnalysisSpec analysis;
  std::string output_dir = "runs";
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string pointer, const std::string& message)
      : std::runtime_error(pointer.empty() ? message : pointer + ": " + message),
        pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

RunConfig parse_run_config(const nlohmann::json& doc);

// Full config with every default filled in. Keys are sorted, so dump() of
// this is the canonical text.
nlohmann::json to_json(const RunConfig& cfg);
std::string canonical_text(const RunConfig& cfg);

// Hex FNV-1a of the canonical seed, dataset, model and train sections: the
// part of the config that determines the trained parameters. Evaluation and
// analysis settings reuse the same run directory.
std::string config_hash(const RunConfig& cfg);

// Applies "a.b.c=value". The value is parsed as JSON when possible and taken
// as a string otherwise. Intermediate objects are created as needed.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Reads a config file, applies overrides in order, then the seed.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {},
                          std::optional<std::uint64_t> seed = std::nullopt);

std::filesystem::path run_dir(const RunConfig& cfg);

}  // namespace atfs::harness
