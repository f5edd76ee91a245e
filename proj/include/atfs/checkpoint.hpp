#pragma once

// On-disk checkpoints: <stem>.bin holds the raw parameter vector, <stem>.json
// the sidecar metadata (format version, epoch, validation metrics, RNG state,
// blob checksum and whatever the caller adds, e.g. the config echo).

#include <filesystem>

#include "json.hpp"

#include "atfs/training.hpp"

namespace atfs {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointFile {
  Checkpoint checkpoint;
  nlohmann::json metadata;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// `stem` without extension. `extra` must be a JSON object; its keys are
// merged into the sidecar.
void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt,
                     const nlohmann::json& extra = nlohmann::json::object());

// Throws CheckpointError on a missing file, a format-version mismatch, or a
// blob whose size or checksum disagrees with the sidecar.
CheckpointFile load_checkpoint(const std::filesystem::path& stem);

nlohmann::json metrics_to_json(const EpochMetrics& m);
EpochMetrics metrics_from_json(const nlohmann::json& j);

}  // namespace atfs
