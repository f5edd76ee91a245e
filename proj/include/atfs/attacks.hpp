#pragma once

// L-inf bounded gradient attacks on inputs in [0, 1].

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atfs/nn/network.hpp"
#include "atfs/tensor.hpp"

namespace atfs {

enum class AttackLoss { kCrossEntropy, kCwMargin, kKlToClean };

std::string attack_loss_name(AttackLoss loss);
AttackLoss parse_attack_loss(const std::string& name);

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int steps = 10;
  bool random_start = true;
  AttackLoss loss = AttackLoss::kCrossEntropy;

  // Throws std::invalid_argument on eps < 0, steps < 0, or a non-positive
  // step size with steps > 0.
  void validate() const;
};

struct PerturbedBatch {
  Tensor inputs;
  // Attack objective of each final input (cross-entropy, margin or KL).
  std::vector<double> loss;
};

// Raised when the model produces a non-finite input gradient.
class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// x' = clip01(x + eps * sign(grad_x CE(f(x), y)))
PerturbedBatch fgsm(nn::Classifier& model, const Tensor& x, std::span<const int> y,
                    double epsilon);

// Signed-gradient ascent on cfg.loss with projection onto the eps-ball and
// the [0,1] box after every step. The rng is only drawn from when
// cfg.random_start is set.
PerturbedBatch pgd(nn::Classifier& model, const Tensor& x, std::span<const int> y,
                   const AttackConfig& cfg, std::mt19937_64& rng);

// pgd() on the logit margin max_{j != y} z_j - z_y.
PerturbedBatch cw_pgd(nn::Classifier& model, const Tensor& x, std::span<const int> y,
                      AttackConfig cfg, std::mt19937_64& rng);

// Value of an attack objective for the given inputs (no perturbation).
std::vector<double> attack_objective(nn::Classifier& model, const Tensor& x_adv,
                                     std::span<const int> y, AttackLoss loss,
                                     const Tensor* clean_logits = nullptr);

struct Feasibility {
  std::size_t ball_violations = 0;
  std::size_t box_violations = 0;

  bool ok() const { return ball_violations == 0 && box_violations == 0; }
};

// Exact elementwise check of x - eps <= x' <= x + eps (bounds rounded the
// same way the projection computes them) and 0 <= x' <= 1.
Feasibility check_feasibility(const Tensor& x, const Tensor& x_adv, double epsilon);

// A named attack in an evaluation suite.
enum class AttackKind { kFgsm, kPgd, kCw };

std::string attack_kind_name(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

struct AttackSpec {
  std::string name;
  AttackKind kind = AttackKind::kPgd;
  AttackConfig config;
};

PerturbedBatch run_attack(nn::Classifier& model, const AttackSpec& spec, const Tensor& x,
                          std::span<const int> y, std::mt19937_64& rng);

// FGSM(eps), PGD-20(eps, step), CW-inf PGD-20(eps, step); no random start.
std::vector<AttackSpec> default_eval_suite(double epsilon = 8.0 / 255.0,
                                           double step_size = 2.0 / 255.0);

}  // namespace atfs
