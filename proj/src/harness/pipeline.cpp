#include "atfs/harness/pipeline.hpp"

#include <cerrno>
#include <cmath>
#include <cstring>
#include <fcntl.h>
#include <random>
#include <sstream>
#include <unistd.h>

#include "atfs/analysis.hpp"
#include "atfs/checkpoint.hpp"
#include "atfs/harness/datasets.hpp"
#include "atfs/harness/models.hpp"
#include "atfs/io.hpp"

namespace atfs::harness {

using nlohmann::json;

RunLock::RunLock(const std::filesystem::path& dir) : path_(dir / "run.lock") {
  std::filesystem::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      std::string owner = "unknown";
      try {
        owner = io::read_file(path_);
      } catch (const std::exception&) {
      }
      throw RunLocked(dir.string() + " is locked by pid " + owner + "; remove " + path_.string() +
                      " if that process is gone");
    }
    throw std::runtime_error("cannot create " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid());
  const ssize_t written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
  if (written != static_cast<ssize_t>(pid.size())) {
    std::filesystem::remove(path_);
    throw std::runtime_error("cannot write " + path_.string());
  }
}

RunLock::~RunLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

namespace {

std::string num(double v) { return std::isnan(v) ? "nan" : io::format_double(v); }

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void say(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

const Split& pick_split(const DatasetSplits& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  return d.test;
}

json dataset_report(const DatasetSplits& d) {
  json hist, sums;
  for (const auto& [name, split] : {std::pair<const char*, const Split*>{"train", &d.train},
                                    {"val", &d.val},
                                    {"test", &d.test}}) {
    hist[name] = label_histogram(split->y, d.num_classes);
    sums[name] = io::hex64(split_checksum(*split));
  }
  return {{"name", d.name}, {"label_histogram", hist}, {"split_checksums", sums}};
}

struct LoadedModel {
  DatasetSplits data;
  std::unique_ptr<nn::Network> net;
  std::filesystem::path stem;
  int epoch = -1;
};

LoadedModel load_for_run(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
  LoadedModel m;
  m.data = load_dataset(cfg.dataset);
  m.net = build_model(cfg.model, m.data.input_shape, m.data.num_classes, cfg.seed);
  m.stem = checkpoint.empty() ? run_dir(cfg) / "best" : checkpoint;
  const CheckpointFile file = load_checkpoint(m.stem);
  try {
    m.net->set_flat_parameters(file.checkpoint.parameters);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(m.stem.string() + ": does not fit the configured model: " + e.what());
  }
  m.epoch = file.checkpoint.epoch;
  return m;
}

Tensor features_of(nn::Network& net, const Tensor& x, std::size_t batch = 256) {
  Tensor out({x.rows(), net.feature_dim()});
  for (std::size_t lo = 0; lo < x.rows(); lo += batch) {
    const std::size_t hi = std::min(x.rows(), lo + batch);
    const Tensor f = net.forward(x.slice_rows(lo, hi)).features;
    std::copy(f.values().begin(), f.values().end(), out.data() + lo * out.row_size());
  }
  return out;
}

json similarity_summary(const SimilarityMatrix& m) {
  return {{"mean_diagonal", num_or_null(m.mean_diagonal())},
          {"mean_off_diagonal", num_or_null(m.mean_off_diagonal())}};
}

json thickness_config_json(const ThicknessConfig& th) {
  return {{"alpha", th.alpha},
          {"beta", th.beta},
          {"pairs", th.pairs},
          {"segment_points", th.segment_points},
          {"max_attempts", th.max_attempts},
          {"seed", th.seed},
          {"l2_attack",
           {{"epsilon", th.attack.epsilon}, {"step_size", th.attack.step_size}, {"steps", th.attack.steps}}}};
}

std::string cell_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::string grid_path(const std::string& key) {
  if (key == "lambda_fs" || key == "eta1" || key == "eta2" || key == "variant" || key == "lambda_adv") {
    return "train." + key;
  }
  return key;
}

}  // namespace

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,lr,L_adv,L_FS,val_clean_acc,val_robust_acc\n";
  for (const EpochMetrics& m : history) {
    out += std::to_string(m.epoch) + "," + num(m.lr) + "," + num(m.adv_loss) + "," + num(m.fs_loss) +
           "," + num(m.val_clean_acc) + "," + num(m.val_robust_acc) + "\n";
  }
  return out;
}

std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "epoch,lr,L_adv,L_FS,val_clean_acc,val_robust_acc") {
    throw std::runtime_error(path.string() + ": unexpected metrics header");
  }
  auto value = [&](const std::string& s) { return s == "nan" ? std::nan("") : std::stod(s); };
  std::vector<EpochMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string c;
    while (std::getline(row, c, ',')) cells.push_back(c);
    if (cells.size() != 6) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    EpochMetrics m;
    m.epoch = std::stoi(cells[0]);
    m.lr = value(cells[1]);
    m.adv_loss = value(cells[2]);
    m.fs_loss = value(cells[3]);
    m.val_clean_acc = value(cells[4]);
    m.val_robust_acc = value(cells[5]);
    out.push_back(m);
  }
  return out;
}

TrainOutcome run_train(const RunConfig& cfg, std::ostream* log) {
  TrainOutcome out{run_dir(cfg), {}};
  const RunLock lock(out.dir);
  const json echo = to_json(cfg);
  io::write_file_atomic(out.dir / "config.json", canonical_text(cfg));

  const DatasetSplits data = load_dataset(cfg.dataset);
  const json data_report = dataset_report(data);
  say(log, "[train] " + out.dir.string() + ": " + data.name + " label histogram " +
               data_report["label_histogram"].dump());
  auto net = build_model(cfg.model, data.input_shape, data.num_classes, cfg.seed);
  say(log, "[train] model " + net->describe() + ", " + std::to_string(net->parameter_count()) +
               " parameters");

  std::vector<EpochMetrics> history;
  io::write_file_atomic(out.dir / "metrics.csv", metrics_csv(history));
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    history.push_back(m);
    io::write_file_atomic(out.dir / "metrics.csv", metrics_csv(history));
    std::ostringstream s;
    s << "[train] epoch " << m.epoch << " lr " << m.lr << " L_adv " << m.adv_loss << " L_FS "
      << m.fs_loss << " val_clean " << m.val_clean_acc << " val_robust " << m.val_robust_acc;
    say(log, s.str());
  };

  json summary{{"config", echo}, {"config_hash", config_hash(cfg)}, {"dataset", data_report},
               {"parameter_count", net->parameter_count()}};
  try {
    out.result = train(cfg.train, data.train, data.val, *net, hooks);
  } catch (const TrainingDiverged& e) {
    summary["status"] = "diverged";
    summary["error"] = e.what();
    summary["diverged_epoch"] = e.epoch();
    summary["epochs_completed"] = history.size();
    io::write_file_atomic(out.dir / "train.json", summary.dump(2) + "\n");
    throw;
  }

  const json extra{{"config", echo}, {"config_hash", config_hash(cfg)}, {"model", net->describe()}};
  json best_extra = extra, last_extra = extra;
  best_extra["role"] = "best";
  last_extra["role"] = "last";
  save_checkpoint(out.dir / "best", out.result.best, best_extra);
  save_checkpoint(out.dir / "last", out.result.last, last_extra);

  summary["status"] = "completed";
  summary["epochs_completed"] = history.size();
  summary["best_epoch"] = out.result.state.best_epoch;
  summary["best_val_robust_acc"] = num_or_null(out.result.state.best_val_robust_acc);
  io::write_file_atomic(out.dir / "train.json", summary.dump(2) + "\n");
  say(log, "[train] best epoch " + std::to_string(out.result.state.best_epoch));
  return out;
}

json run_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::ostream* log) {
  const auto dir = run_dir(cfg);
  const RunLock lock(dir);
  LoadedModel m = load_for_run(cfg, checkpoint);
  const Split& split = pick_split(m.data, cfg.eval.split);
  const RobustReport r = evaluate_robust(*m.net, split, cfg.eval.suite, cfg.seed);

  json attacks = json::array();
  for (std::size_t i = 0; i < r.attacks.size(); ++i) {
    const AttackAccuracy& a = r.attacks[i];
    const AttackSpec& spec = cfg.eval.suite[i];
    attacks.push_back({{"name", a.name},
                       {"kind", attack_kind_name(spec.kind)},
                       {"epsilon", spec.config.epsilon},
                       {"steps", spec.config.steps},
                       {"robust_accuracy", a.robust_accuracy},
                       {"mean_loss", num_or_null(a.mean_loss)},
                       {"ball_violations", a.ball_violations},
                       {"box_violations", a.box_violations}});
    say(log, "[eval] " + a.name + " robust accuracy " + num(a.robust_accuracy));
  }
  const json report{{"config", to_json(cfg)},
                    {"checkpoint", {{"stem", m.stem.string()}, {"epoch", m.epoch}}},
                    {"split", cfg.eval.split},
                    {"samples", r.samples},
                    {"clean_accuracy", r.clean_accuracy},
                    {"attacks", attacks}};
  say(log, "[eval] clean accuracy " + num(r.clean_accuracy));
  io::write_file_atomic(dir / "report.json", report.dump(2) + "\n");
  return report;
}

json run_analyze(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::ostream* log) {
  const auto dir = run_dir(cfg);
  const RunLock lock(dir);
  LoadedModel m = load_for_run(cfg, checkpoint);
  Split split = pick_split(m.data, cfg.analysis.split);
  if (cfg.analysis.max_samples != 0 && cfg.analysis.max_samples < split.size()) {
    const std::size_t k = cfg.analysis.max_samples;
    split.x = split.x.slice_rows(0, k);
    split.y.resize(k);
    split.source_index.resize(k);
  }
  const std::size_t n = split.size(), classes = m.data.num_classes;

  std::mt19937_64 rng(cfg.seed);
  Tensor x_adv(split.x.shape());
  for (std::size_t lo = 0; lo < n; lo += 256) {
    const std::size_t hi = std::min(n, lo + 256);
    const std::span<const int> y(split.y.data() + lo, hi - lo);
    const PerturbedBatch b = pgd(*m.net, split.x.slice_rows(lo, hi), y, cfg.analysis.feature_attack, rng);
    std::copy(b.inputs.values().begin(), b.inputs.values().end(), x_adv.data() + lo * split.x.row_size());
  }
  const Tensor f_clean = features_of(*m.net, split.x);
  const Tensor f_adv = features_of(*m.net, x_adv);

  const SimilarityMatrix sim = class_similarity_matrix(f_clean, split.y, classes);
  const SimilarityMatrix sim_adv = class_similarity_matrix(f_adv, split.y, classes);
  write_similarity_csv(dir / "similarity.csv", sim);
  write_similarity_csv(dir / "similarity_adv.csv", sim_adv);
  write_similarity_pgm(dir / "similarity.pgm", sim);

  // Rows follow the graph's node order: clean sample i is node 2i, its
  // adversarial counterpart node 2i + 1.
  const std::size_t d = f_clean.row_size();
  Tensor nodes({2 * n, d});
  std::vector<int> node_labels(2 * n);
  std::vector<bool> adversarial(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(f_clean.data() + i * d, d, nodes.data() + 2 * i * d);
    std::copy_n(f_adv.data() + i * d, d, nodes.data() + (2 * i + 1) * d);
    node_labels[2 * i] = node_labels[2 * i + 1] = split.y[i];
    adversarial[2 * i + 1] = true;
  }
  write_features_csv(dir / "features_2d.csv", export_features_2d(nodes, node_labels, adversarial));
  write_raw_features_csv(dir / "features_raw.csv", nodes, node_labels, adversarial);

  const ThicknessResult th = boundary_thickness(*m.net, split, cfg.analysis.thickness);
  const json echo = to_json(cfg);
  const json thickness{{"value", num_or_null(th.value)},
                       {"defined", th.defined},
                       {"pairs_used", th.pairs_used},
                       {"attempts", th.attempts},
                       {"diagnostics", th.diagnostics},
                       {"thickness_config", thickness_config_json(cfg.analysis.thickness)},
                       {"config", echo}};
  io::write_file_atomic(dir / "thickness.json", thickness.dump(2) + "\n");
  say(log, "[analyze] thickness " + num(th.value) + " (" + th.diagnostics + ")");

  const json summary{{"config", echo},
                     {"checkpoint", {{"stem", m.stem.string()}, {"epoch", m.epoch}}},
                     {"split", cfg.analysis.split},
                     {"samples", n},
                     {"similarity_clean", similarity_summary(sim)},
                     {"similarity_adv", similarity_summary(sim_adv)},
                     {"thickness", {{"value", num_or_null(th.value)}, {"defined", th.defined},
                                    {"pairs_used", th.pairs_used}}}};
  say(log, "[analyze] clean similarity diag " + num(sim.mean_diagonal()) + " off-diag " +
               num(sim.mean_off_diagonal()));
  io::write_file_atomic(dir / "analysis.json", summary.dump(2) + "\n");
  return summary;
}

SweepAxis parse_grid(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw ConfigError("", "grid '" + spec + "' is not of the form key=v1,v2,...");
  }
  SweepAxis axis{spec.substr(0, eq), {}};
  std::istringstream parts(spec.substr(eq + 1));
  std::string item;
  while (std::getline(parts, item, ',')) {
    if (item.empty()) throw ConfigError("", "empty value in grid '" + spec + "'");
    json v = json::parse(item, nullptr, false);
    axis.values.push_back(v.is_discarded() ? json(item) : v);
  }
  return axis;
}

std::filesystem::path run_sweep(const RunConfig& base, const std::vector<SweepAxis>& grid,
                                std::ostream* log) {
  if (grid.empty()) throw ConfigError("", "sweep needs at least one --grid axis");
  std::string key_text = config_hash(base);
  for (const SweepAxis& a : grid) {
    if (a.values.empty()) throw ConfigError("", "grid axis '" + a.key + "' has no values");
    key_text += "|" + a.key;
    for (const json& v : a.values) key_text += "," + v.dump();
  }
  const auto dir = std::filesystem::path(base.output_dir) / ("sweep-" + io::hex64(io::fnv1a64(key_text)));

  std::string csv;
  for (const SweepAxis& a : grid) csv += a.key + ",";
  csv += "run_dir,best_epoch,best_val_robust_acc,clean_accuracy";
  for (const AttackSpec& s : base.eval.suite) csv += "," + s.name + "_robust_accuracy";
  csv += ",sim_intra,sim_inter,sim_adv_intra,sim_adv_inter,thickness\n";

  std::vector<std::size_t> pos(grid.size(), 0);
  while (true) {
    json doc = to_json(base);
    std::string row;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const json& v = grid[k].values[pos[k]];
      apply_override(doc, grid_path(grid[k].key) + "=" + v.dump());
      row += cell_text(v) + ",";
    }
    const RunConfig cfg = parse_run_config(doc);
    say(log, "[sweep] " + row + " -> " + run_dir(cfg).string());
    const TrainOutcome t = run_train(cfg, log);
    const json report = run_eval(cfg, {}, log);
    const json analysis = run_analyze(cfg, {}, log);

    row += t.dir.string() + "," + std::to_string(t.result.state.best_epoch) + "," +
           num(t.result.state.best_val_robust_acc) + "," + num(report["clean_accuracy"].get<double>());
    for (const json& a : report["attacks"]) row += "," + num(a["robust_accuracy"].get<double>());
    auto field = [](const json& j) { return j.is_null() ? std::string("nan") : num(j.get<double>()); };
    row += "," + field(analysis["similarity_clean"]["mean_diagonal"]) + "," +
           field(analysis["similarity_clean"]["mean_off_diagonal"]) + "," +
           field(analysis["similarity_adv"]["mean_diagonal"]) + "," +
           field(analysis["similarity_adv"]["mean_off_diagonal"]) + "," +
           field(analysis["thickness"]["value"]) + "\n";
    csv += row;
    io::write_file_atomic(dir / "sweep.csv", csv);

    std::size_t k = grid.size();
    while (k > 0) {
      --k;
      if (++pos[k] < grid[k].values.size()) break;
      pos[k] = 0;
      if (k == 0) return dir / "sweep.csv";
    }
  }
}

}  // namespace atfs::harness
