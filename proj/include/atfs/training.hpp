#pragma once

// Adversarial training with an optional feature-separability term:
//
//   objective = lambda_adv * L_adv - lambda_fs * L_FS
//
// L_adv is one of the AT / TRADES / MART losses and L_FS the batch
// log-likelihood from fs_loss.hpp (maximized, hence subtracted).

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atfs/atg.hpp"
#include "atfs/attacks.hpp"
#include "atfs/data.hpp"
#include "atfs/fs_loss.hpp"
#include "atfs/nn/network.hpp"

namespace atfs {

enum class AdvVariant { kAt, kTrades, kMart };

std::string adv_variant_name(AdvVariant variant);
AdvVariant parse_adv_variant(const std::string& name);

// Inner maximization loss used to craft x' for each variant.
AttackLoss inner_attack_loss(AdvVariant variant);

struct AdvLossConfig {
  AdvVariant variant = AdvVariant::kAt;
  double trades_weight = 5.0;  // 1/lambda multiplying the TRADES KL term
  double mart_weight = 5.0;    // lambda_m multiplying the MART KL term
};

struct AdvLossEval {
  double value = 0.0;
  std::vector<double> per_sample;
  Tensor grad_clean;  // d value / d clean logits (zero for AT)
  Tensor grad_adv;    // d value / d adversarial logits
};

// Batch-mean adversarial loss from clean logits f(x) and adversarial logits
// f(x'), both [N, C]:
//   AT      CE(f(x'), y)
//   TRADES  CE(f(x), y) + trades_weight * KL(p(x) || p(x'))
//   MART    BCE(f(x'), y) + mart_weight * KL(p(x) || p(x')) * (1 - p_y(x))
AdvLossEval adv_loss(const AdvLossConfig& cfg, const Tensor& clean_logits,
                     const Tensor& adv_logits, std::span<const int> y);

double adv_loss(const AdvLossConfig& cfg, nn::Classifier& model, const Tensor& x,
                const Tensor& x_adv, std::span<const int> y);

// Piecewise-constant learning rate: base divided by `divisor` once for every
// milestone <= epoch.
struct LrSchedule {
  double base = 0.1;
  std::vector<int> milestones{75, 90};
  double divisor = 10.0;

  double at(int epoch) const;
  // Throws unless milestones are strictly increasing, non-negative and
  // < epochs, and base, divisor are positive.
  void validate(int epochs) const;
};

// lr of the default 120-epoch schedule.
double lr_at(int epoch);

struct TrainConfig {
  double lambda_adv = 1.0;
  double lambda_fs = 0.0;
  LinkWeights link_weights;
  FsOptions fs;
  AdvLossConfig adv;
  // Training-time attack; loss is overridden by inner_attack_loss(variant).
  AttackConfig attack{8.0 / 255.0, 2.0 / 255.0, 10, true, AttackLoss::kCrossEntropy};
  // Attack used to score the validation split after each epoch.
  AttackConfig selection_attack{8.0 / 255.0, 2.0 / 255.0, 10, false, AttackLoss::kCrossEntropy};
  int epochs = 120;
  std::size_t batch_size = 128;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

double total_objective(double adv, const FsLossValue& fs, const TrainConfig& cfg);

struct BatchObjective {
  double adv = 0.0;
  double fs = 0.0;
  double total = 0.0;
};

// Objective on a fixed batch (x, x') with sub the batch subgraph. The
// _backward variant also accumulates parameter gradients into the model.
BatchObjective objective_value(nn::Network& model, const BatchSubgraph& sub, const Tensor& x,
                               const Tensor& x_adv, std::span<const int> y,
                               const TrainConfig& cfg);
BatchObjective objective_backward(nn::Network& model, const BatchSubgraph& sub, const Tensor& x,
                                  const Tensor& x_adv, std::span<const int> y,
                                  const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = -1;
  double lr = 0.0;
  double adv_loss = 0.0;  // sample-weighted mean over the epoch
  double fs_loss = 0.0;
  double val_clean_acc = std::numeric_limits<double>::quiet_NaN();
  double val_robust_acc = std::numeric_limits<double>::quiet_NaN();
};

struct Checkpoint {
  int epoch = -1;  // -1: the untrained initial model
  std::vector<double> parameters;
  EpochMetrics metrics;
  std::string rng_state;
};

struct TrainState {
  int epoch = -1;  // last completed epoch
  double best_val_robust_acc = -std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<EpochMetrics> history;
};

struct TrainResult {
  TrainState state;
  Checkpoint best;
  Checkpoint last;  // parameters after the final epoch
};

struct StepInfo {
  int epoch = 0;
  std::size_t step = 0;  // global optimizer step
  double lr = 0.0;
  BatchObjective objective;
};

struct TrainHooks {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// Minibatch adversarial training. Each epoch draws a seeded permutation of
// the training split, crafts x' per batch with PGD, takes one SGD step on the
// objective, then scores val with cfg.selection_attack. The best checkpoint
// is the earliest epoch with the highest validation robust accuracy. The
// model is left holding the final-epoch parameters.
TrainResult train(const TrainConfig& cfg, const Split& train_split, const Split& val_split,
                  nn::Network& model, const TrainHooks& hooks = {});

double accuracy(nn::Classifier& model, const Split& data, std::size_t batch_size = 256);

struct AttackAccuracy {
  std::string name;
  double robust_accuracy = 0.0;
  double mean_loss = 0.0;
  std::size_t ball_violations = 0;
  std::size_t box_violations = 0;
};

struct RobustReport {
  std::size_t samples = 0;
  double clean_accuracy = 0.0;
  std::vector<AttackAccuracy> attacks;
};

// Clean accuracy plus robust accuracy under every attack in the suite, with
// the feasibility of every attacked input re-checked.
RobustReport evaluate_robust(nn::Classifier& model, const Split& data,
                             const std::vector<AttackSpec>& suite, std::uint64_t seed,
                             std::size_t batch_size = 256);

}  // namespace atfs
