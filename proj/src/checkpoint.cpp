#include "atfs/checkpoint.hpp"

#include <cmath>
#include <cstring>

#include "atfs/io.hpp"

namespace atfs {
namespace {

constexpr char kMagic[8] = {'A', 'T', 'F', 'S', 'P', 'A', 'R', '1'};

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  std::filesystem::path p = stem;
  p += ext;
  return p;
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double number_or_nan(const nlohmann::json& j) {
  return j.is_number() ? j.get<double>() : std::nan("");
}

}  // namespace

nlohmann::json metrics_to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"lr", number_or_null(m.lr)},
          {"L_adv", number_or_null(m.adv_loss)},
          {"L_FS", number_or_null(m.fs_loss)},
          {"val_clean_acc", number_or_null(m.val_clean_acc)},
          {"val_robust_acc", number_or_null(m.val_robust_acc)}};
}

EpochMetrics metrics_from_json(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.lr = number_or_nan(j.at("lr"));
  m.adv_loss = number_or_nan(j.at("L_adv"));
  m.fs_loss = number_or_nan(j.at("L_FS"));
  m.val_clean_acc = number_or_nan(j.at("val_clean_acc"));
  m.val_robust_acc = number_or_nan(j.at("val_robust_acc"));
  return m;
}

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt,
                     const nlohmann::json& extra) {
  if (!extra.is_object()) throw std::invalid_argument("save_checkpoint: extra must be an object");
  std::string blob(sizeof kMagic + sizeof(std::uint64_t) + ckpt.parameters.size() * sizeof(double), '\0');
  const std::uint64_t count = ckpt.parameters.size();
  std::memcpy(blob.data(), kMagic, sizeof kMagic);
  std::memcpy(blob.data() + sizeof kMagic, &count, sizeof count);
  std::memcpy(blob.data() + sizeof kMagic + sizeof count, ckpt.parameters.data(),
              ckpt.parameters.size() * sizeof(double));

  nlohmann::json meta = extra;
  meta["format_version"] = kCheckpointFormatVersion;
  meta["epoch"] = ckpt.epoch;
  meta["metrics"] = metrics_to_json(ckpt.metrics);
  meta["rng_state"] = ckpt.rng_state;
  meta["parameter_count"] = count;
  meta["blob"] = with_ext(stem, ".bin").filename().string();
  meta["blob_fnv1a64"] = io::hex64(io::fnv1a64(blob));

  io::write_file_atomic(with_ext(stem, ".bin"), blob);
  io::write_file_atomic(with_ext(stem, ".json"), meta.dump(2) + "\n");
}

CheckpointFile load_checkpoint(const std::filesystem::path& stem) {
  const auto json_path = with_ext(stem, ".json");
  if (!std::filesystem::exists(json_path)) {
    throw CheckpointError("checkpoint metadata not found: " + json_path.string());
  }
  CheckpointFile out;
  try {
    out.metadata = nlohmann::json::parse(io::read_file(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(json_path.string() + ": " + e.what());
  }
  const nlohmann::json& meta = out.metadata;
  const int version = meta.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError(json_path.string() + ": format version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointFormatVersion));
  }
  const std::string blob = io::read_file(with_ext(stem, ".bin"));
  if (io::hex64(io::fnv1a64(blob)) != meta.at("blob_fnv1a64").get<std::string>()) {
    throw CheckpointError(stem.string() + ".bin: checksum mismatch");
  }
  std::uint64_t count = 0;
  if (blob.size() < sizeof kMagic + sizeof count ||
      std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(stem.string() + ".bin: not a parameter blob");
  }
  std::memcpy(&count, blob.data() + sizeof kMagic, sizeof count);
  if (count != meta.at("parameter_count").get<std::uint64_t>() ||
      blob.size() != sizeof kMagic + sizeof count + count * sizeof(double)) {
    throw CheckpointError(stem.string() + ".bin: parameter count mismatch");
  }
  Checkpoint& c = out.checkpoint;
  c.parameters.resize(count);
  std::memcpy(c.parameters.data(), blob.data() + sizeof kMagic + sizeof count, count * sizeof(double));
  c.epoch = meta.at("epoch").get<int>();
  c.metrics = metrics_from_json(meta.at("metrics"));
  c.rng_state = meta.at("rng_state").get<std::string>();
  return out;
}

}  // namespace atfs
