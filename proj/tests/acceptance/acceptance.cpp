// Acceptance suite: one [PASS]/[FAIL] line per criterion, nonzero exit on any
// failure.
//
//   acceptance <atfs-lab binary> <source dir> [criterion numbers...]

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>
#include <unistd.h>
#include <sys/wait.h>

#include "fs_oracle.hpp"
#include "test_models.hpp"

#include "atfs/analysis.hpp"
#include "atfs/atg.hpp"
#include "atfs/attacks.hpp"
#include "atfs/fs_loss.hpp"
#include "atfs/harness/config.hpp"
#include "atfs/harness/datasets.hpp"
#include "atfs/harness/models.hpp"
#include "atfs/harness/pipeline.hpp"
#include "atfs/io.hpp"
#include "atfs/nn/losses.hpp"
#include "atfs/nn/sgd.hpp"
#include "atfs/training.hpp"

namespace {

using namespace atfs;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string g_lab_binary;
fs::path g_source_dir;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("atfs-acceptance-" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---- C1 ------------------------------------------------------------------

Outcome atg_partition() {
  std::mt19937_64 rng(101);
  std::size_t checked_pairs = 0;
  for (int draw = 0; draw < 200; ++draw) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const std::size_t classes = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
    std::vector<int> labels(n);
    for (int& l : labels) l = std::uniform_int_distribution<int>(0, static_cast<int>(classes) - 1)(rng);
    const Atg g(labels, LinkWeights{}, classes);
    const std::size_t m = 2 * n;

    std::size_t degree_sum = 0, ca = 0, intra = 0, neg = 0;
    for (std::size_t u = 0; u < m; ++u) {
      const NodeLinks links = g.links_of_node({u});
      const std::size_t degree = links.ca.size() + links.intra.size() + links.negative.size();
      if (degree != m - 1) return {false, fmt("draw %d node %zu: degree %zu != %zu", draw, u, degree, m - 1)};
      degree_sum += degree;

      std::set<std::size_t> seen;
      auto visit = [&](const std::vector<NodeId>& set, LinkKind kind) -> bool {
        for (NodeId v : set) {
          if (v.index == u || v.index >= m || !seen.insert(v.index).second) return false;
          const bool same = labels[u / 2] == labels[v.index / 2];
          const LinkKind expected = (v.index == (u ^ 1u)) ? LinkKind::kCleanAdversarial
                                    : same                ? LinkKind::kIntraClass
                                                          : LinkKind::kNegative;
          if (expected != kind || g.link_kind({u}, v) != kind || g.link_kind(v, {u}) != kind) return false;
        }
        return true;
      };
      if (!visit(links.ca, LinkKind::kCleanAdversarial) || !visit(links.intra, LinkKind::kIntraClass) ||
          !visit(links.negative, LinkKind::kNegative)) {
        return {false, fmt("draw %d node %zu: link sets overlap or misclassify a pair", draw, u)};
      }
      if (seen.size() != m - 1) return {false, fmt("draw %d node %zu: links do not cover every other node", draw, u)};
      ca += links.ca.size();
      intra += links.intra.size();
      neg += links.negative.size();
    }
    const std::size_t pairs = m * (m - 1) / 2;
    if (degree_sum != 2 * pairs) return {false, fmt("draw %d: degree sum %zu != %zu", draw, degree_sum, 2 * pairs)};
    const LinkCounts counts = g.link_counts();
    if (counts.ca != ca / 2 || counts.intra != intra / 2 || counts.negative != neg / 2 || counts.total() != pairs) {
      return {false, fmt("draw %d: closed-form link counts disagree with enumeration", draw)};
    }
    checked_pairs += pairs;
  }
  return {true, fmt("200 label vectors, %zu pairs each in exactly one link set", checked_pairs)};
}

// ---- C2 / C3 -------------------------------------------------------------

struct RandomBatch {
  Tensor raw;
  BatchSubgraph sub;
  LinkWeights weights;
  double temperature = 1.0;
};

std::vector<RandomBatch> random_batches() {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> normal;
  std::vector<RandomBatch> out;
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t pool = 24;
    const int classes = std::uniform_int_distribution<int>(1, 4)(rng);
    std::vector<int> labels(pool);
    for (int& l : labels) l = std::uniform_int_distribution<int>(0, classes - 1)(rng);
    const LinkWeights w{std::uniform_real_distribution<double>(0.1, 2.0)(rng),
                        std::uniform_real_distribution<double>(0.1, 2.0)(rng), 1.0};
    const Atg g(labels, w);
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::uniform_int_distribution<std::size_t>(1, 8)(rng));
    const std::size_t dim = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    Tensor raw({2 * idx.size(), dim});
    for (double& v : raw.values()) v = normal(rng);
    const double tau = draw % 2 == 0 ? 1.0 : std::uniform_real_distribution<double>(0.2, 2.0)(rng);
    out.push_back({raw, g.subgraph_for_batch(idx), w, tau});
  }
  return out;
}

Outcome fs_oracle_equivalence() {
  double worst = 0.0;
  for (const RandomBatch& b : random_batches()) {
    const FsLossValue v = fs_loss_batch(normalize_features(b.raw), b.sub, b.weights, {b.temperature});
    const auto ref = testing::naive_fs_loss(b.raw, b.sub, b.weights.eta1, b.weights.eta2, b.temperature);
    worst = std::max(worst, std::abs(v.total - ref.total));
    for (std::size_t i = 0; i < ref.per_node.size(); ++i) {
      worst = std::max(worst, std::abs(v.per_node[i] - ref.per_node[i]));
    }
    if (!(worst <= 1e-10)) break;
  }
  return {worst <= 1e-10, fmt("100 batches, max |diff| %.3g (tol 1e-10)", worst)};
}

Outcome probability_normalization() {
  double worst = 0.0;
  for (const RandomBatch& b : random_batches()) {
    const FeatureBatch f = normalize_features(b.raw);
    const FsLossValue v = fs_loss_batch(f, b.sub, b.weights, {b.temperature});
    for (std::size_t i = 0; i < b.sub.node_count(); ++i) {
      double incident = 0.0, row = 0.0;
      for (const IncidentLink& l : link_probabilities(f, b.sub, i, {b.temperature})) incident += l.probability;
      for (std::size_t j = 0; j < b.sub.node_count(); ++j) row += v.probabilities.at(i, j);
      worst = std::max({worst, std::abs(incident - 1.0), std::abs(row - 1.0)});
    }
  }
  return {worst <= 1e-9, fmt("max |sum p - 1| %.3g (tol 1e-9)", worst)};
}

// ---- C4 ------------------------------------------------------------------

Outcome gradient_check() {
  std::mt19937_64 rng(404);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    std::vector<int> labels(8);
    for (int& l : labels) l = std::uniform_int_distribution<int>(0, 2)(rng);
    const LinkWeights w{std::uniform_real_distribution<double>(0.5, 2.0)(rng),
                        std::uniform_real_distribution<double>(0.5, 2.0)(rng), 1.0};
    const Atg g(labels, w);
    std::vector<std::size_t> idx(8);
    std::iota(idx.begin(), idx.end(), 0);
    const BatchSubgraph sub = g.subgraph_for_batch(idx);
    Tensor raw({16, 4});
    for (double& v : raw.values()) v = normal(rng);

    const Tensor analytic = fs_loss_with_grad(normalize_features(raw), sub, w).grad_raw;
    const double h = 1e-5;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      Tensor plus = raw, minus = raw;
      plus[k] += h;
      minus[k] -= h;
      const double numeric = (fs_loss_batch(normalize_features(plus), sub, w).total -
                              fs_loss_batch(normalize_features(minus), sub, w).total) / (2.0 * h);
      diff2 += (analytic[k] - numeric) * (analytic[k] - numeric);
      a2 += analytic[k] * analytic[k];
      n2 += numeric * numeric;
    }
    worst = std::max(worst, std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-300}));
  }
  return {worst < 1e-4, fmt("20 draws of 16 nodes x 4 dims, max relative error %.3g (tol 1e-4)", worst)};
}

// ---- C5 ------------------------------------------------------------------

Outcome worked_value() {
  const Atg g({0, 1}, LinkWeights{});
  const std::vector<std::size_t> idx{0, 1};
  Tensor raw({4, 2});
  const double rows[] = {1, 0, 0, 1, 1, 0, 0, 1};
  std::copy(std::begin(rows), std::end(rows), raw.values().begin());
  const double total = fs_loss_batch(normalize_features(raw), g.subgraph_for_batch(idx), LinkWeights{}).total;
  const double e = std::exp(1.0);
  const double expected = std::log(e / (e + 2.0));
  const bool pass = std::abs(total - expected) <= 1e-6 && std::abs(total - -0.55144) <= 1e-5;
  return {pass, fmt("total %.12f, log(e/(e+2)) = %.12f", total, expected)};
}

// ---- C6 ------------------------------------------------------------------

Outcome attack_feasibility() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t ball = 0, box = 0, fgsm_pgd_checks = 0, fgsm_pgd_mismatch = 0, elements = 0;
  for (int call = 0; call < 1000; ++call) {
    const std::size_t dim = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    const std::size_t classes = std::uniform_int_distribution<std::size_t>(2, 5)(rng);
    const std::size_t rows = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    harness::ModelSpec spec;
    spec.hidden = 8;
    spec.depth = 1;
    spec.feature_dim = 4;
    auto model = harness::build_model(spec, {dim}, classes, rng());

    Tensor x({rows, dim});
    for (double& v : x.values()) {
      const double r = unit(rng);
      v = r < 0.15 ? 0.0 : r < 0.3 ? 1.0 : unit(rng);
    }
    std::vector<int> y(rows);
    for (int& l : y) l = std::uniform_int_distribution<int>(0, static_cast<int>(classes) - 1)(rng);

    AttackConfig cfg;
    cfg.epsilon = call % 50 == 0 ? 0.0 : std::uniform_real_distribution<double>(1e-3, 0.5)(rng);
    cfg.step_size = std::uniform_real_distribution<double>(1e-3, 0.3)(rng);
    cfg.steps = std::uniform_int_distribution<int>(0, 6)(rng);
    cfg.random_start = unit(rng) < 0.5;
    cfg.loss = unit(rng) < 0.5 ? AttackLoss::kCrossEntropy : AttackLoss::kCwMargin;

    Tensor adv;
    switch (call % 3) {
      case 0: adv = fgsm(*model, x, y, cfg.epsilon).inputs; break;
      case 1: adv = pgd(*model, x, y, cfg, rng).inputs; break;
      default: adv = cw_pgd(*model, x, y, cfg, rng).inputs; break;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!(adv[i] >= x[i] - cfg.epsilon && adv[i] <= x[i] + cfg.epsilon)) ++ball;
      if (!(adv[i] >= 0.0 && adv[i] <= 1.0)) ++box;
    }
    elements += x.size();

    if (call % 5 == 0 && cfg.epsilon > 0.0) {
      const AttackConfig one{cfg.epsilon, cfg.epsilon * (1.0 + 2.0 * unit(rng)), 1, false,
                             AttackLoss::kCrossEntropy};
      const Tensor a = pgd(*model, x, y, one, rng).inputs;
      const Tensor b = fgsm(*model, x, y, cfg.epsilon).inputs;
      ++fgsm_pgd_checks;
      if (!bit_equal(a.values(), b.values())) ++fgsm_pgd_mismatch;
    }
  }
  const bool pass = ball == 0 && box == 0 && fgsm_pgd_mismatch == 0;
  return {pass, fmt("1000 calls, %zu elements: %zu ball / %zu box violations; PGD(1 step) != FGSM in %zu of %zu",
                    elements, ball, box, fgsm_pgd_mismatch, fgsm_pgd_checks)};
}

// ---- C7 ------------------------------------------------------------------

Outcome at_equivalence() {
  harness::DatasetSpec data_spec;  // synthetic-gaussians
  data_spec.classes = 3;
  const DatasetSplits data = harness::load_dataset(data_spec);
  harness::ModelSpec model_spec;
  const std::uint64_t model_seed = 17;

  TrainConfig cfg;
  cfg.lambda_fs = 0.0;
  cfg.epochs = 7;
  cfg.batch_size = 25;
  cfg.schedule = {0.1, {5}, 10.0};
  cfg.attack = {0.05, 0.0125, 5, true, AttackLoss::kCrossEntropy};
  cfg.selection_attack = {0.05, 0.0125, 5, false, AttackLoss::kCrossEntropy};
  cfg.seed = 23;

  auto net = harness::build_model(model_spec, data.input_shape, data.num_classes, model_seed);
  std::vector<std::vector<double>> trajectory;
  TrainHooks hooks;
  hooks.on_step = [&](const StepInfo&) { trajectory.push_back(net->flat_parameters()); };
  train(cfg, data.train, data.val, *net, hooks);
  if (trajectory.size() < 50) return {false, fmt("only %zu optimizer steps", trajectory.size())};

  // Plain PGD-AT: shuffle, attack, cross-entropy on x', SGD step.
  auto ref = harness::build_model(model_spec, data.input_shape, data.num_classes, model_seed);
  std::mt19937_64 rng(cfg.seed);
  nn::Sgd opt(cfg.momentum, cfg.weight_decay);
  const Split& train_split = data.train;
  std::vector<std::size_t> order(train_split.size());
  std::size_t step = 0;
  for (int epoch = 0; step < 50; ++epoch) {
    const double lr = epoch < 5 ? 0.1 : 0.01;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size() && step < 50; lo += cfg.batch_size, ++step) {
      const std::vector<std::size_t> idx(order.begin() + lo,
                                         order.begin() + std::min(order.size(), lo + cfg.batch_size));
      const Tensor x = train_split.x.gather_rows(idx);
      std::vector<int> y;
      for (std::size_t i : idx) y.push_back(train_split.y[i]);
      const Tensor x_adv = pgd(*ref, x, y, cfg.attack, rng).inputs;
      ref->zero_grad();
      const nn::LossEval ce = nn::cross_entropy(ref->forward(x_adv).logits, y);
      ref->backward(ce.grad, nullptr, true);
      opt.step(ref->parameters(), lr);
      if (!bit_equal(ref->flat_parameters(), trajectory[step])) {
        return {false, fmt("parameters diverge at step %zu", step)};
      }
    }
  }
  return {true, fmt("50 steps bit-identical (%zu parameters)", trajectory[0].size())};
}

// ---- C8 ------------------------------------------------------------------

Outcome schedule() {
  for (int epoch = 0; epoch < 120; ++epoch) {
    const double expected = epoch < 75 ? 0.1 : epoch < 90 ? 0.01 : 0.001;
    if (lr_at(epoch) != expected) return {false, fmt("lr_at(%d) = %.17g", epoch, lr_at(epoch))};
  }
  return {true, "epochs 0..119 exact"};
}

// ---- C9 ------------------------------------------------------------------

struct ArmResult {
  double diag = 0.0, off = 0.0, pgd20 = 0.0, thickness = std::nan("");
};

ArmResult run_arm(const std::string& config_name, std::uint64_t seed, const fs::path& out) {
  harness::RunConfig cfg = harness::load_run_config(g_source_dir / "configs" / config_name, {}, seed);
  cfg.output_dir = out.string();
  std::erase_if(cfg.eval.suite, [](const AttackSpec& a) { return a.name != "pgd20"; });
  harness::run_train(cfg);
  const nlohmann::json report = harness::run_eval(cfg);
  const nlohmann::json analysis = harness::run_analyze(cfg);
  ArmResult r;
  r.pgd20 = report["attacks"][0]["robust_accuracy"].get<double>();
  r.diag = analysis["similarity_clean"]["mean_diagonal"].get<double>();
  r.off = analysis["similarity_clean"]["mean_off_diagonal"].get<double>();
  if (analysis["thickness"]["value"].is_number()) r.thickness = analysis["thickness"]["value"].get<double>();
  return r;
}

Outcome directional_experiment() {
  const fs::path out = scratch("directional");
  std::vector<ArmResult> at, atfs;
  std::ostringstream rows;
  try {
    for (std::uint64_t seed : {0, 1, 2}) {
      at.push_back(run_arm("mnist-small-cnn-at.json", seed, out));
      atfs.push_back(run_arm("mnist-small-cnn-atfs.json", seed, out));
      std::fprintf(stderr,
                   "  seed %llu  AT: diag %.4f off %.4f thick %.4f pgd20 %.4f | ATFS: diag %.4f off %.4f thick %.4f pgd20 %.4f\n",
                   static_cast<unsigned long long>(seed), at.back().diag, at.back().off, at.back().thickness,
                   at.back().pgd20, atfs.back().diag, atfs.back().off, atfs.back().thickness, atfs.back().pgd20);
    }
  } catch (const harness::DataError& e) {
    return {false, std::string("mnist-subset unavailable: ") + e.what()};
  }
  auto mean = [](const std::vector<ArmResult>& v, double ArmResult::*f) {
    double s = 0.0;
    for (const ArmResult& r : v) s += r.*f;
    return s / static_cast<double>(v.size());
  };
  const double d_diag = mean(atfs, &ArmResult::diag) - mean(at, &ArmResult::diag);
  const double d_off = mean(at, &ArmResult::off) - mean(atfs, &ArmResult::off);
  const double d_pgd = mean(atfs, &ArmResult::pgd20) - mean(at, &ArmResult::pgd20);
  int thicker = 0;
  for (std::size_t s = 0; s < at.size(); ++s) {
    if (atfs[s].thickness > at[s].thickness) ++thicker;
  }
  const bool a = d_diag >= 0.02, b = d_off >= 0.01, c = thicker >= 2, d = d_pgd >= -0.01;
  return {a && b && c && d,
          fmt("(a) diagonal %+.4f [%s] (b) off-diagonal lower by %.4f [%s] (c) thicker in %d/3 [%s] "
              "(d) PGD-20 %+.2f pp [%s]",
              d_diag, a ? "ok" : "miss", d_off, b ? "ok" : "miss", thicker, c ? "ok" : "miss",
              100.0 * d_pgd, d ? "ok" : "miss")};
}

// ---- C10 -----------------------------------------------------------------

Outcome thickness_closed_form() {
  testing::LinearGapModel model;
  ThicknessConfig cfg;
  cfg.segment_points = 128;
  // Unit segments x1 -> x1 + e0 from x1[0] = 0; the other coordinates do not
  // affect the posterior.
  std::mt19937_64 rng(1010);
  const std::size_t k = 16;
  Tensor x1({k, 3}), x2({k, 3});
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 1; c < 3; ++c) x1.at(r, c) = x2.at(r, c) = std::uniform_real_distribution<double>(0, 1)(rng);
    x2.at(r, 0) = 1.0;
  }
  const std::vector<double> v = thickness_of_pairs(model, x1, x2, std::vector<int>(k, 0), std::vector<int>(k, 1), cfg);
  double worst = 0.0;
  for (double t : v) worst = std::max(worst, std::abs(t - 0.375));
  return {worst <= 0.01, fmt("%zu segments, value %.6f, max |diff| from 0.375 %.3g", k, v[0], worst)};
}

// ---- C11 -----------------------------------------------------------------

std::string run_capture(const std::string& cmd, int& status) {
  std::string out;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) {
    status = -1;
    return out;
  }
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
  const int raw = ::pclose(p);
  status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

Outcome cli_determinism() {
  const fs::path root = scratch("determinism");
  std::vector<std::string> csv;
  for (const char* name : {"a", "b"}) {
    int status = 0;
    const std::string dir = run_capture(g_lab_binary + " train --config " +
                                            (g_source_dir / "configs" / "gaussians-at.json").string() +
                                            " --seed 7 --out " + (root / name).string() + " 2>/dev/null",
                                        status);
    if (status != 0) return {false, fmt("train exited with %d", status)};
    csv.push_back(io::read_file(fs::path(dir) / "metrics.csv"));
  }
  const bool same = csv[0] == csv[1] && !csv[0].empty();
  return {same, fmt("metrics.csv %s (%zu bytes)", same ? "byte-identical" : "differs", csv[0].size())};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: acceptance <atfs-lab binary> <source dir> [criterion...]\n";
    return 2;
  }
  g_lab_binary = argv[1];
  g_source_dir = argv[2];
  std::set<int> only;
  for (int i = 3; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<Criterion> criteria{
      {1, "ATG partition", 5, atg_partition},
      {2, "FS loss matches the naive reference", 10, fs_oracle_equivalence},
      {3, "link probabilities normalize", 5, probability_normalization},
      {4, "FS loss gradient check", 30, gradient_check},
      {5, "orthonormal worked value", 1, worked_value},
      {6, "attack feasibility and PGD-1 = FGSM", 60, attack_feasibility},
      {7, "lambda_fs = 0 reproduces plain AT", 60, at_equivalence},
      {8, "learning-rate schedule", 1, schedule},
      {9, "directional mnist-subset experiment", 1200, directional_experiment},
      {10, "thickness closed form", 5, thickness_closed_form},
      {11, "CLI train determinism", 120, cli_determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    if (!o.pass) ++failures;
    std::printf("[%s] C%d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(fs::temp_directory_path() / ("atfs-acceptance-" + std::to_string(::getpid())));
  return failures == 0 ? 0 : 1;
}
