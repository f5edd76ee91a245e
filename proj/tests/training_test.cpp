#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>
#include <vector>

#include <unistd.h>

#include "atfs/checkpoint.hpp"
#include "atfs/io.hpp"
#include "atfs/nn/losses.hpp"
#include "atfs/nn/sgd.hpp"
#include "atfs/training.hpp"
#include "test_models.hpp"

using namespace atfs;
using atfs::testing::random_tensor;
using atfs::testing::tiny_mlp;

namespace {

constexpr double kCeOneZero = 0.31326168751822286;  // log(1 + e^-1)

// Isotropic Gaussian blobs clipped to [0, 1], balanced over classes.
Split blobs(std::size_t n, std::size_t dim, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::normal_distribution<double> noise(0.0, 0.08);
  std::mt19937_64 centers_rng(1234);
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
  for (auto& c : centers)
    for (auto& v : c) v = u(centers_rng);
  Split s{Tensor({n, dim}), std::vector<int>(n), std::vector<std::size_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    s.y[i] = static_cast<int>(i % classes);
    s.source_index[i] = i;
    for (std::size_t d = 0; d < dim; ++d)
      s.x.at(i, d) = std::clamp(centers[s.y[i]][d] + noise(rng), 0.0, 1.0);
  }
  return s;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.schedule = {0.05, {2}, 10.0};
  cfg.attack = {0.05, 0.0125, 3, true, AttackLoss::kCrossEntropy};
  cfg.selection_attack = {0.05, 0.0125, 3, false, AttackLoss::kCrossEntropy};
  cfg.seed = 17;
  return cfg;
}

FsLossValue fs_total(double total) {
  FsLossValue v;
  v.total = total;
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

}  // namespace

TEST(Schedule, DefaultValues) {
  for (int e = 0; e <= 74; ++e) EXPECT_EQ(lr_at(e), 0.1);
  for (int e = 75; e <= 89; ++e) EXPECT_EQ(lr_at(e), 0.01);
  for (int e = 90; e <= 119; ++e) EXPECT_EQ(lr_at(e), 0.001);
}

TEST(Schedule, Validation) {
  EXPECT_NO_THROW(LrSchedule{}.validate(120));
  EXPECT_THROW(LrSchedule{}.validate(80), std::invalid_argument);
  EXPECT_THROW((LrSchedule{0.1, {5, 5}, 10.0}.validate(10)), std::invalid_argument);
  EXPECT_THROW((LrSchedule{0.0, {}, 10.0}.validate(10)), std::invalid_argument);
  TrainConfig cfg;
  cfg.lambda_fs = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Objective, Arithmetic) {
  TrainConfig cfg;
  cfg.lambda_fs = 0.1;
  EXPECT_DOUBLE_EQ(total_objective(0.5, fs_total(-0.6), cfg), 0.56);
  EXPECT_EQ(total_objective(0.5, fs_total(0.0), cfg), 0.5);
  cfg.lambda_fs = 0.0;
  EXPECT_EQ(total_objective(0.5, fs_total(-3.0), cfg), 0.5);
  EXPECT_THROW(total_objective(NAN, fs_total(0.0), cfg), std::invalid_argument);
}

TEST(AdvLoss, ClosedFormsAndEdgeCases) {
  const std::vector<int> y{0};
  const Tensor z({1, 2}, {1.0, 0.0});
  EXPECT_NEAR(adv_loss({AdvVariant::kAt}, z, z, y).value, kCeOneZero, 1e-15);

  // Identical distributions: the TRADES KL term vanishes.
  std::mt19937_64 rng(40);
  const Tensor logits = random_tensor({4, 3}, rng, -2, 2);
  const std::vector<int> y4{0, 1, 2, 1};
  EXPECT_NEAR(adv_loss({AdvVariant::kTrades}, logits, logits, y4).value,
              nn::cross_entropy(logits, y4).mean(), 1e-15);

  // p_y(x) == 1: the MART regularizer vanishes.
  const Tensor confident({1, 3}, {100.0, -100.0, -100.0});
  const Tensor adv = random_tensor({1, 3}, rng, -1, 1);
  EXPECT_EQ(adv_loss({AdvVariant::kMart}, confident, adv, y).value,
            nn::boosted_cross_entropy(adv, y).mean());

  EXPECT_EQ(parse_adv_variant("mart"), AdvVariant::kMart);
  EXPECT_THROW(parse_adv_variant("awp"), std::invalid_argument);
  EXPECT_EQ(inner_attack_loss(AdvVariant::kTrades), AttackLoss::kKlToClean);
  EXPECT_EQ(inner_attack_loss(AdvVariant::kMart), AttackLoss::kCrossEntropy);
}

TEST(AdvLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(41);
  const std::vector<int> y{0, 2, 1};
  for (AdvVariant v : {AdvVariant::kAt, AdvVariant::kTrades, AdvVariant::kMart}) {
    const AdvLossConfig cfg{v, 3.0, 4.0};
    Tensor clean = random_tensor({3, 3}, rng, -2, 2);
    Tensor adv = random_tensor({3, 3}, rng, -2, 2);
    const AdvLossEval e = adv_loss(cfg, clean, adv, y);
    for (Tensor* t : {&clean, &adv}) {
      const Tensor& g = t == &clean ? e.grad_clean : e.grad_adv;
      for (std::size_t i = 0; i < t->size(); ++i) {
        const double keep = (*t)[i], h = 1e-6;
        (*t)[i] = keep + h;
        const double up = adv_loss(cfg, clean, adv, y).value;
        (*t)[i] = keep - h;
        const double down = adv_loss(cfg, clean, adv, y).value;
        (*t)[i] = keep;
        ASSERT_LT(rel_err((up - down) / (2 * h), g[i]), 1e-6)
            << adv_variant_name(v) << (t == &clean ? " clean " : " adv ") << i;
      }
    }
  }
}

TEST(Sgd, QuadraticTrajectoryThroughTrainingOptimizer) {
  // f(w) = 0.5 * ||w - c||^2 with c = (1, -2); lr 0.1, momentum 0.9, wd 0.
  // Hand recursion: v_t = 0.9 v_{t-1} + (w - c), w -= 0.1 v_t.
  nn::Parameter p("w", 2);
  nn::Sgd opt(0.9, 0.0);
  const double c[2] = {1.0, -2.0};
  double w[2] = {0.0, 0.0}, v[2] = {0.0, 0.0};
  for (int t = 0; t < 25; ++t) {
    for (int i = 0; i < 2; ++i) {
      p.grad[i] = p.value[i] - c[i];
      v[i] = 0.9 * v[i] + (w[i] - c[i]);
      w[i] -= 0.1 * v[i];
    }
    opt.step({&p}, 0.1);
    EXPECT_EQ(p.value[0], w[0]);
    EXPECT_EQ(p.value[1], w[1]);
  }
  EXPECT_NEAR(p.value[0], 1.0, 0.1);
}

TEST(Training, ZeroEpochsReturnsInitialModel) {
  const Split data = blobs(40, 4, 2, 1);
  auto net = tiny_mlp(4, 8, 6, 2, 3);
  const std::vector<double> initial = net->flat_parameters();
  TrainConfig cfg = small_config();
  cfg.epochs = 0;
  cfg.schedule.milestones.clear();
  const TrainResult r = train(cfg, data, data, *net);
  EXPECT_EQ(r.state.epoch, -1);
  EXPECT_TRUE(r.state.history.empty());
  EXPECT_EQ(r.best.epoch, -1);
  EXPECT_TRUE(bit_equal(r.best.parameters, initial));
  EXPECT_TRUE(bit_equal(net->flat_parameters(), initial));
}

TEST(Training, LambdaFsZeroMatchesPlainAtLoop) {
  const Split data = blobs(100, 5, 3, 2);
  const Split val = blobs(30, 5, 3, 3);
  TrainConfig cfg = small_config();
  cfg.epochs = 5;
  cfg.batch_size = 10;
  cfg.schedule = {0.05, {3}, 10.0};
  cfg.lambda_fs = 0.0;

  auto net = tiny_mlp(5, 12, 8, 3, 4);
  std::vector<std::vector<double>> trajectory;
  TrainHooks hooks;
  hooks.on_step = [&](const StepInfo&) { trajectory.push_back(net->flat_parameters()); };
  train(cfg, data, val, *net, hooks);
  ASSERT_EQ(trajectory.size(), 50u);

  // Reference: plain PGD-AT written out by hand.
  auto ref = tiny_mlp(5, 12, 8, 3, 4);
  std::mt19937_64 rng(cfg.seed);
  nn::Sgd opt(cfg.momentum, cfg.weight_decay);
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch >= 3 ? 0.005 : 0.05;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < data.size(); lo += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + lo, order.begin() + lo + cfg.batch_size);
      const Tensor x = data.x.gather_rows(idx);
      std::vector<int> y;
      for (std::size_t i : idx) y.push_back(data.y[i]);
      const PerturbedBatch adv = pgd(*ref, x, y, cfg.attack, rng);
      ref->zero_grad();
      const nn::LossEval ce = nn::cross_entropy(ref->forward(adv.inputs).logits, y);
      ref->backward(ce.grad, nullptr, true);
      opt.step(ref->parameters(), lr);
      ASSERT_TRUE(bit_equal(ref->flat_parameters(), trajectory[step])) << "step " << step;
      ++step;
    }
  }
}

TEST(Training, ObjectiveGradientIsLinearAndMatchesFiniteDifferences) {
  std::mt19937_64 rng(42);
  const Split data = blobs(6, 3, 2, 5);
  const Atg graph(data.y, LinkWeights{1.5, 1.0, 1.0});
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  const BatchSubgraph sub = graph.subgraph_for_batch(idx);
  Tensor x_adv = data.x;
  for (double& v : x_adv.values()) v = std::clamp(v + std::uniform_real_distribution<double>(-0.05, 0.05)(rng), 0.0, 1.0);

  for (AdvVariant variant : {AdvVariant::kAt, AdvVariant::kTrades, AdvVariant::kMart}) {
    auto net = tiny_mlp(3, 6, 4, 2, 43);
    TrainConfig cfg;
    cfg.link_weights = graph.weights();
    cfg.adv.variant = variant;
    auto grad_for = [&](double la, double lf) {
      TrainConfig c = cfg;
      c.lambda_adv = la;
      c.lambda_fs = lf;
      net->zero_grad();
      objective_backward(*net, sub, data.x, x_adv, data.y, c);
      return net->flat_gradients();
    };
    const auto g_adv = grad_for(1.0, 0.0);
    const auto g_fs = grad_for(0.0, 1.0);  // = -grad L_FS
    const auto g_mix = grad_for(0.7, 0.3);
    for (std::size_t i = 0; i < g_mix.size(); ++i)
      ASSERT_NEAR(g_mix[i], 0.7 * g_adv[i] + 0.3 * g_fs[i], 1e-12 * (1 + std::abs(g_mix[i])));

    cfg.lambda_adv = 0.7;
    cfg.lambda_fs = 0.3;
    std::vector<double> flat = net->flat_parameters();
    for (std::size_t i = 0; i < flat.size(); i += 2) {
      const double keep = flat[i], h = 1e-6;
      flat[i] = keep + h;
      net->set_flat_parameters(flat);
      const double up = objective_value(*net, sub, data.x, x_adv, data.y, cfg).total;
      flat[i] = keep - h;
      net->set_flat_parameters(flat);
      const double down = objective_value(*net, sub, data.x, x_adv, data.y, cfg).total;
      flat[i] = keep;
      net->set_flat_parameters(flat);
      ASSERT_LT(rel_err((up - down) / (2 * h), g_mix[i]), 1e-3) << adv_variant_name(variant) << " param " << i;
    }
  }
}

TEST(Training, DeterministicAndSelectsEarliestBest) {
  const Split data = blobs(64, 4, 2, 6);
  const Split val = blobs(20, 4, 2, 7);
  TrainConfig cfg = small_config();
  cfg.lambda_fs = 0.2;
  auto a = tiny_mlp(4, 8, 6, 2, 8);
  auto b = tiny_mlp(4, 8, 6, 2, 8);
  const TrainResult ra = train(cfg, data, val, *a);
  const TrainResult rb = train(cfg, data, val, *b);
  ASSERT_EQ(ra.state.history.size(), 3u);
  EXPECT_TRUE(bit_equal(ra.best.parameters, rb.best.parameters));
  EXPECT_EQ(ra.best.metrics.val_robust_acc, rb.best.metrics.val_robust_acc);
  EXPECT_EQ(ra.best.rng_state, rb.best.rng_state);

  int best = 0;
  for (std::size_t e = 1; e < ra.state.history.size(); ++e)
    if (ra.state.history[e].val_robust_acc > ra.state.history[best].val_robust_acc) best = static_cast<int>(e);
  EXPECT_EQ(ra.state.best_epoch, best);
  EXPECT_EQ(ra.best.epoch, best);
  EXPECT_EQ(ra.state.best_val_robust_acc, ra.state.history[best].val_robust_acc);
  EXPECT_EQ(ra.state.history[2].lr, 0.005);
  for (const EpochMetrics& m : ra.state.history) {
    EXPECT_TRUE(std::isfinite(m.adv_loss));
    EXPECT_LE(m.fs_loss, 0.0);
  }
}

TEST(Training, AllVariantsRunWithFsTerm) {
  const Split data = blobs(48, 4, 3, 9);
  for (AdvVariant v : {AdvVariant::kAt, AdvVariant::kTrades, AdvVariant::kMart}) {
    TrainConfig cfg = small_config();
    cfg.adv.variant = v;
    cfg.lambda_fs = 0.5;
    auto net = tiny_mlp(4, 8, 6, 3, 10);
    const TrainResult r = train(cfg, data, data, *net);
    EXPECT_EQ(r.state.history.size(), 3u) << adv_variant_name(v);
    EXPECT_GE(r.best.epoch, 0);
  }
}

TEST(Training, DivergenceReportsEpoch) {
  const Split data = blobs(32, 4, 2, 11);
  TrainConfig cfg = small_config();
  cfg.schedule = {1e200, {}, 10.0};
  auto net = tiny_mlp(4, 8, 6, 2, 12);
  try {
    train(cfg, data, data, *net);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.epoch(), 0);
  }
}

TEST(EvaluateRobust, ZeroBudgetEqualsClean) {
  const Split data = blobs(50, 4, 2, 13);
  auto net = tiny_mlp(4, 8, 6, 2, 14);
  const RobustReport r = evaluate_robust(*net, data, default_eval_suite(0.0, 2.0 / 255.0), 1);
  ASSERT_EQ(r.attacks.size(), 3u);
  for (const AttackAccuracy& a : r.attacks) {
    EXPECT_EQ(a.robust_accuracy, r.clean_accuracy) << a.name;
    EXPECT_EQ(a.ball_violations + a.box_violations, 0u);
  }
}

TEST(EvaluateRobust, SuiteIsFeasible) {
  const Split data = blobs(60, 4, 3, 15);
  auto net = tiny_mlp(4, 8, 6, 3, 16);
  auto suite = default_eval_suite(0.1, 0.03);
  suite.push_back({"pgd-rs", AttackKind::kPgd, {0.1, 0.03, 5, true}});
  const RobustReport r = evaluate_robust(*net, data, suite, 2, 7);
  for (const AttackAccuracy& a : r.attacks) {
    EXPECT_EQ(a.ball_violations, 0u);
    EXPECT_EQ(a.box_violations, 0u);
    EXPECT_LE(a.robust_accuracy, 1.0);
  }
}

TEST(EvaluateRobust, UntrainedTenClassModelNearChance) {
  // 1000 balanced samples; a prediction rule independent of labels gets
  // Binomial(1000, 0.1) hits, and P(|X - 100| > 50) is far below 1%.
  std::mt19937_64 rng(17);
  Split data{random_tensor({1000, 8}, rng, 0, 1), std::vector<int>(1000), {}};
  for (std::size_t i = 0; i < 1000; ++i) data.y[i] = static_cast<int>(i % 10);
  std::shuffle(data.y.begin(), data.y.end(), rng);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto net = tiny_mlp(8, 16, 12, 10, 100 + seed);
    const double acc = accuracy(*net, data);
    EXPECT_GE(acc, 0.05);
    EXPECT_LE(acc, 0.15);
  }
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("atfs-ckpt-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripReproducesForward) {
  auto net = tiny_mlp(4, 8, 6, 3, 20);
  Checkpoint c{7, net->flat_parameters(), EpochMetrics{7, 0.01, 1.2, -0.4, 0.8, NAN}, "rng"};
  save_checkpoint(dir_ / "best", c, {{"note", "probe"}});
  const CheckpointFile f = load_checkpoint(dir_ / "best");
  EXPECT_EQ(f.checkpoint.epoch, 7);
  EXPECT_EQ(f.metadata.at("note"), "probe");
  EXPECT_TRUE(std::isnan(f.checkpoint.metrics.val_robust_acc));
  EXPECT_EQ(f.checkpoint.metrics.val_clean_acc, 0.8);

  auto other = tiny_mlp(4, 8, 6, 3, 21);
  other->set_flat_parameters(f.checkpoint.parameters);
  std::mt19937_64 rng(1);
  const Tensor probe = random_tensor({5, 4}, rng, 0, 1);
  EXPECT_EQ(net->forward(probe).logits, other->forward(probe).logits);
  EXPECT_FALSE(std::filesystem::exists(dir_ / ("best.json.tmp." + std::to_string(::getpid()))));
}

TEST_F(CheckpointTest, RejectsVersionAndCorruption) {
  auto net = tiny_mlp(3, 4, 4, 2, 22);
  save_checkpoint(dir_ / "c", Checkpoint{0, net->flat_parameters(), {}, ""});
  std::string blob = io::read_file(dir_ / "c.bin");
  blob[blob.size() - 1] ^= 1;
  io::write_file_atomic(dir_ / "c.bin", blob);
  EXPECT_THROW(load_checkpoint(dir_ / "c"), CheckpointError);

  save_checkpoint(dir_ / "v", Checkpoint{0, net->flat_parameters(), {}, ""});
  auto meta = nlohmann::json::parse(io::read_file(dir_ / "v.json"));
  meta["format_version"] = 99;
  io::write_file_atomic(dir_ / "v.json", meta.dump());
  EXPECT_THROW(load_checkpoint(dir_ / "v"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir_ / "missing"), CheckpointError);
}
