#include "atfs/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "atfs/nn/losses.hpp"
#include "atfs/simd/kernels.hpp"

namespace atfs {
namespace {

void check_inputs(const Tensor& x, std::span<const int> y) {
  if (x.rows() != y.size()) {
    throw std::invalid_argument("attack: " + std::to_string(y.size()) + " labels for " +
                                std::to_string(x.rows()) + " inputs");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= 0.0 && x[i] <= 1.0)) {
      throw std::invalid_argument("attack: clean input entry " + std::to_string(i) +
                                  " outside [0, 1]");
    }
  }
}

// Gradient of the attack objective w.r.t. the input. Scaling is irrelevant
// to the signed step, so the batch-mean gradient is used as is.
Tensor input_gradient(nn::Classifier& model, const Tensor& x_adv, std::span<const int> y,
                      AttackLoss loss, const Tensor* clean_logits) {
  const nn::ModelOutput out = model.forward(x_adv);
  Tensor grad_logits;
  switch (loss) {
    case AttackLoss::kCrossEntropy: grad_logits = nn::cross_entropy(out.logits, y).grad; break;
    case AttackLoss::kCwMargin: grad_logits = nn::cw_margin(out.logits, y).grad; break;
    case AttackLoss::kKlToClean:
      grad_logits = nn::kl_divergence(*clean_logits, out.logits).grad_q;
      break;
  }
  Tensor g = model.backward(grad_logits, nullptr, false);
  if (!g.all_finite()) {
    std::ostringstream msg;
    msg << "attack: non-finite input gradient (loss " << attack_loss_name(loss)
        << ", batch " << x_adv.rows() << ")";
    throw AttackError(msg.str());
  }
  return g;
}

}  // namespace

std::string attack_loss_name(AttackLoss loss) {
  switch (loss) {
    case AttackLoss::kCrossEntropy: return "cross-entropy";
    case AttackLoss::kCwMargin: return "cw-margin";
    case AttackLoss::kKlToClean: return "kl-to-clean";
  }
  return "unknown";
}

AttackLoss parse_attack_loss(const std::string& name) {
  if (name == "cross-entropy") return AttackLoss::kCrossEntropy;
  if (name == "cw-margin") return AttackLoss::kCwMargin;
  if (name == "kl-to-clean") return AttackLoss::kKlToClean;
  throw std::invalid_argument("unknown attack loss '" + name + "'");
}

std::string attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kCw: return "cw";
  }
  return "unknown";
}

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "fgsm") return AttackKind::kFgsm;
  if (name == "pgd") return AttackKind::kPgd;
  if (name == "cw") return AttackKind::kCw;
  throw std::invalid_argument("unknown attack kind '" + name + "'");
}

void AttackConfig::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0.0) {
    throw std::invalid_argument("attack: epsilon must be finite and >= 0");
  }
  if (steps < 0) throw std::invalid_argument("attack: steps must be >= 0");
  if (steps > 0 && !(step_size > 0.0 && std::isfinite(step_size))) {
    throw std::invalid_argument("attack: step_size must be > 0 when steps > 0");
  }
}

std::vector<double> attack_objective(nn::Classifier& model, const Tensor& x_adv,
                                     std::span<const int> y, AttackLoss loss,
                                     const Tensor* clean_logits) {
  const nn::ModelOutput out = model.forward(x_adv);
  switch (loss) {
    case AttackLoss::kCrossEntropy: return nn::cross_entropy(out.logits, y).per_sample;
    case AttackLoss::kCwMargin: return nn::cw_margin(out.logits, y).per_sample;
    case AttackLoss::kKlToClean:
      if (clean_logits == nullptr) throw std::invalid_argument("attack: KL needs clean logits");
      return nn::kl_divergence(*clean_logits, out.logits).per_sample;
  }
  return {};
}

PerturbedBatch fgsm(nn::Classifier& model, const Tensor& x, std::span<const int> y,
                    double epsilon) {
  check_inputs(x, y);
  if (!std::isfinite(epsilon) || epsilon < 0.0) {
    throw std::invalid_argument("fgsm: epsilon must be finite and >= 0");
  }
  Tensor x_adv = x;
  if (epsilon > 0.0) {
    const Tensor g = input_gradient(model, x, y, AttackLoss::kCrossEntropy, nullptr);
    simd::kernels().sign_step_project(x_adv.data(), g.data(), x.data(), epsilon, epsilon,
                                      x.size());
  }
  std::vector<double> loss = attack_objective(model, x_adv, y, AttackLoss::kCrossEntropy);
  return {std::move(x_adv), std::move(loss)};
}

PerturbedBatch pgd(nn::Classifier& model, const Tensor& x, std::span<const int> y,
                   const AttackConfig& cfg, std::mt19937_64& rng) {
  check_inputs(x, y);
  cfg.validate();
  Tensor clean_logits;
  if (cfg.loss == AttackLoss::kKlToClean) clean_logits = model.forward(x).logits;
  const Tensor* clean = cfg.loss == AttackLoss::kKlToClean ? &clean_logits : nullptr;

  Tensor x_adv = x;
  if (cfg.epsilon > 0.0) {
    if (cfg.random_start) {
      std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
      for (std::size_t i = 0; i < x_adv.size(); ++i) {
        const double v = std::clamp(x[i] + u(rng), x[i] - cfg.epsilon, x[i] + cfg.epsilon);
        x_adv[i] = std::clamp(v, 0.0, 1.0);
      }
    }
    const auto& k = simd::kernels();
    for (int s = 0; s < cfg.steps; ++s) {
      const Tensor g = input_gradient(model, x_adv, y, cfg.loss, clean);
      k.sign_step_project(x_adv.data(), g.data(), x.data(), cfg.step_size, cfg.epsilon,
                          x.size());
    }
  }
  std::vector<double> loss = attack_objective(model, x_adv, y, cfg.loss, clean);
  return {std::move(x_adv), std::move(loss)};
}

PerturbedBatch cw_pgd(nn::Classifier& model, const Tensor& x, std::span<const int> y,
                      AttackConfig cfg, std::mt19937_64& rng) {
  cfg.loss = AttackLoss::kCwMargin;
  return pgd(model, x, y, cfg, rng);
}

Feasibility check_feasibility(const Tensor& x, const Tensor& x_adv, double epsilon) {
  if (x.shape() != x_adv.shape()) throw std::invalid_argument("feasibility: shape mismatch");
  Feasibility f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    // The ball is the set of doubles between the rounded bounds x - eps and
    // x + eps, which is exactly what the projection clamps to.
    if (!(x_adv[i] >= x[i] - epsilon && x_adv[i] <= x[i] + epsilon)) ++f.ball_violations;
    if (!(x_adv[i] >= 0.0 && x_adv[i] <= 1.0)) ++f.box_violations;
  }
  return f;
}

PerturbedBatch run_attack(nn::Classifier& model, const AttackSpec& spec, const Tensor& x,
                          std::span<const int> y, std::mt19937_64& rng) {
  switch (spec.kind) {
    case AttackKind::kFgsm: return fgsm(model, x, y, spec.config.epsilon);
    case AttackKind::kPgd: return pgd(model, x, y, spec.config, rng);
    case AttackKind::kCw: return cw_pgd(model, x, y, spec.config, rng);
  }
  throw std::invalid_argument("run_attack: unknown kind");
}

std::vector<AttackSpec> default_eval_suite(double epsilon, double step_size) {
  return {
      {"fgsm", AttackKind::kFgsm, {epsilon, epsilon, 1, false, AttackLoss::kCrossEntropy}},
      {"pgd20", AttackKind::kPgd, {epsilon, step_size, 20, false, AttackLoss::kCrossEntropy}},
      {"cw20", AttackKind::kCw, {epsilon, step_size, 20, false, AttackLoss::kCwMargin}},
  };
}

}  // namespace atfs
