#include "atfs/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "atfs/nn/losses.hpp"
#include "atfs/nn/sgd.hpp"

namespace atfs {
namespace {

Tensor scaled(Tensor t, double s) {
  if (s != 1.0) {
    for (double& v : t.values()) v *= s;
  }
  return t;
}

void add_into(Tensor& dst, const Tensor& src, double s = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

// Whether the step needs clean logits and features in the same pass as the
// adversarial ones. Plain AT without the FS term trains on f(x') alone.
bool joint_forward(const TrainConfig& cfg) {
  return cfg.lambda_fs > 0.0 || cfg.adv.variant != AdvVariant::kAt;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

void check_split(const Split& s, std::size_t classes, const char* what) {
  if (s.x.rows() != s.y.size()) {
    throw std::invalid_argument(std::string(what) + ": input rows and labels differ");
  }
  for (int y : s.y) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument(std::string(what) + ": label " + std::to_string(y) +
                                  " outside the model's classes");
    }
  }
}

std::vector<int> labels_of(const Split& s, std::span<const std::size_t> idx) {
  std::vector<int> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = s.y[idx[i]];
  return y;
}

}  // namespace

std::string adv_variant_name(AdvVariant variant) {
  switch (variant) {
    case AdvVariant::kAt: return "at";
    case AdvVariant::kTrades: return "trades";
    case AdvVariant::kMart: return "mart";
  }
  return "unknown";
}

AdvVariant parse_adv_variant(const std::string& name) {
  if (name == "at") return AdvVariant::kAt;
  if (name == "trades") return AdvVariant::kTrades;
  if (name == "mart") return AdvVariant::kMart;
  throw std::invalid_argument("unknown adversarial variant '" + name + "'");
}

AttackLoss inner_attack_loss(AdvVariant variant) {
  return variant == AdvVariant::kTrades ? AttackLoss::kKlToClean : AttackLoss::kCrossEntropy;
}

AdvLossEval adv_loss(const AdvLossConfig& cfg, const Tensor& clean_logits,
                     const Tensor& adv_logits, std::span<const int> y) {
  if (clean_logits.shape() != adv_logits.shape()) {
    throw std::invalid_argument("adv_loss: clean and adversarial logits differ in shape");
  }
  const std::size_t n = adv_logits.rows(), c = adv_logits.row_size();
  AdvLossEval out{0.0, std::vector<double>(n), Tensor(clean_logits.shape()), Tensor()};
  switch (cfg.variant) {
    case AdvVariant::kAt: {
      nn::LossEval ce = nn::cross_entropy(adv_logits, y);
      out.per_sample = std::move(ce.per_sample);
      out.grad_adv = std::move(ce.grad);
      break;
    }
    case AdvVariant::kTrades: {
      const nn::LossEval ce = nn::cross_entropy(clean_logits, y);
      const nn::KlEval kl = nn::kl_divergence(clean_logits, adv_logits);
      const double w = cfg.trades_weight;
      for (std::size_t i = 0; i < n; ++i) out.per_sample[i] = ce.per_sample[i] + w * kl.per_sample[i];
      out.grad_clean = ce.grad;
      add_into(out.grad_clean, kl.grad_p, w);
      out.grad_adv = scaled(kl.grad_q, w);
      break;
    }
    case AdvVariant::kMart: {
      const nn::LossEval bce = nn::boosted_cross_entropy(adv_logits, y);
      const nn::KlEval kl = nn::kl_divergence(clean_logits, adv_logits);
      const Tensor p = nn::softmax(clean_logits);
      const double w = cfg.mart_weight, inv_n = 1.0 / static_cast<double>(n);
      out.grad_adv = bce.grad;
      for (std::size_t i = 0; i < n; ++i) {
        const double py = p.at(i, y[i]), conf = 1.0 - py;
        out.per_sample[i] = bce.per_sample[i] + w * kl.per_sample[i] * conf;
        for (std::size_t j = 0; j < c; ++j) {
          out.grad_adv.at(i, j) += w * conf * kl.grad_q.at(i, j);
          // d(1 - p_y)/dz_j = -p_y (delta_yj - p_j)
          const double dconf = -py * ((static_cast<int>(j) == y[i] ? 1.0 : 0.0) - p.at(i, j));
          out.grad_clean.at(i, j) =
              w * (conf * kl.grad_p.at(i, j) + kl.per_sample[i] * dconf * inv_n);
        }
      }
      break;
    }
  }
  out.value = std::accumulate(out.per_sample.begin(), out.per_sample.end(), 0.0) /
              static_cast<double>(n);
  return out;
}

double adv_loss(const AdvLossConfig& cfg, nn::Classifier& model, const Tensor& x,
                const Tensor& x_adv, std::span<const int> y) {
  const Tensor clean = model.forward(x).logits;
  const Tensor adv = model.forward(x_adv).logits;
  return adv_loss(cfg, clean, adv, y).value;
}

double LrSchedule::at(int epoch) const {
  double lr = base;
  for (int m : milestones) {
    if (epoch >= m) lr /= divisor;
  }
  return lr;
}

void LrSchedule::validate(int epochs) const {
  if (!(base > 0.0) || !std::isfinite(base)) throw std::invalid_argument("schedule: base lr must be > 0");
  if (!(divisor > 0.0) || !std::isfinite(divisor)) throw std::invalid_argument("schedule: divisor must be > 0");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 0 || (epochs > 0 && milestones[i] >= epochs)) {
      throw std::invalid_argument("schedule: milestone " + std::to_string(milestones[i]) +
                                  " outside [0, " + std::to_string(epochs) + ")");
    }
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      throw std::invalid_argument("schedule: milestones must be strictly increasing");
    }
  }
}

double lr_at(int epoch) { return LrSchedule{}.at(epoch); }

void TrainConfig::validate() const {
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("train: ") + name + " must be finite and >= 0");
    }
  };
  non_negative(lambda_adv, "lambda_adv");
  non_negative(lambda_fs, "lambda_fs");
  non_negative(adv.trades_weight, "trades_weight");
  non_negative(adv.mart_weight, "mart_weight");
  non_negative(momentum, "momentum");
  non_negative(weight_decay, "weight_decay");
  link_weights.validate();
  if (!(fs.temperature > 0.0)) throw std::invalid_argument("train: temperature must be > 0");
  attack.validate();
  selection_attack.validate();
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  schedule.validate(epochs);
}

double total_objective(double adv, const FsLossValue& fs, const TrainConfig& cfg) {
  if (!std::isfinite(adv) || !std::isfinite(fs.total)) {
    throw std::invalid_argument("total_objective: non-finite input");
  }
  return cfg.lambda_adv * adv - cfg.lambda_fs * fs.total;
}

namespace {

BatchObjective objective_impl(nn::Network& model, const BatchSubgraph& sub, const Tensor& x,
                              const Tensor& x_adv, std::span<const int> y,
                              const TrainConfig& cfg, bool backward) {
  const std::size_t b = x.rows();
  if (x_adv.shape() != x.shape() || sub.batch_size() != b || y.size() != b) {
    throw std::invalid_argument("objective: batch, adversarial batch and subgraph disagree");
  }
  const Tensor both = Tensor::concat_rows(x, x_adv);
  BatchObjective out;

  if (!joint_forward(cfg)) {
    // FS value for logging only; computed before the training forward so
    // the caches backward() uses belong to f(x').
    const FeatureBatch feats = normalize_features(model.forward(both).features);
    const FsLossValue fs = fs_loss_batch(feats, sub, cfg.link_weights, cfg.fs);
    const nn::ModelOutput adv_out = model.forward(x_adv);
    const nn::LossEval ce = nn::cross_entropy(adv_out.logits, y);
    out.adv = ce.mean();
    out.fs = fs.total;
    out.total = total_objective(out.adv, fs, cfg);
    if (backward) model.backward(scaled(ce.grad, cfg.lambda_adv), nullptr, true);
    return out;
  }

  const nn::ModelOutput o = model.forward(both);
  const AdvLossEval adv = adv_loss(cfg.adv, o.logits.slice_rows(0, b), o.logits.slice_rows(b, 2 * b), y);
  const FeatureBatch feats = normalize_features(o.features);
  out.adv = adv.value;
  if (cfg.lambda_fs > 0.0 && backward) {
    const FsLossGradient fs = fs_loss_with_grad(feats, sub, cfg.link_weights, cfg.fs);
    out.fs = fs.value.total;
    out.total = total_objective(out.adv, fs.value, cfg);
    const Tensor grad_logits = scaled(Tensor::concat_rows(adv.grad_clean, adv.grad_adv), cfg.lambda_adv);
    const Tensor grad_feats = scaled(fs.grad_raw, -cfg.lambda_fs);
    model.backward(grad_logits, &grad_feats, true);
    return out;
  }
  const FsLossValue fs = fs_loss_batch(feats, sub, cfg.link_weights, cfg.fs);
  out.fs = fs.total;
  out.total = total_objective(out.adv, fs, cfg);
  if (backward) {
    model.backward(scaled(Tensor::concat_rows(adv.grad_clean, adv.grad_adv), cfg.lambda_adv),
                   nullptr, true);
  }
  return out;
}

}  // namespace

BatchObjective objective_value(nn::Network& model, const BatchSubgraph& sub, const Tensor& x,
                               const Tensor& x_adv, std::span<const int> y,
                               const TrainConfig& cfg) {
  return objective_impl(model, sub, x, x_adv, y, cfg, false);
}

BatchObjective objective_backward(nn::Network& model, const BatchSubgraph& sub, const Tensor& x,
                                  const Tensor& x_adv, std::span<const int> y,
                                  const TrainConfig& cfg) {
  return objective_impl(model, sub, x, x_adv, y, cfg, true);
}

double accuracy(nn::Classifier& model, const Split& data, std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < data.size(); lo += batch_size) {
    const std::size_t hi = std::min(data.size(), lo + batch_size);
    const std::vector<int> pred = nn::argmax_rows(model.forward(data.x.slice_rows(lo, hi)).logits);
    for (std::size_t i = lo; i < hi; ++i) correct += pred[i - lo] == data.y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

RobustReport evaluate_robust(nn::Classifier& model, const Split& data,
                             const std::vector<AttackSpec>& suite, std::uint64_t seed,
                             std::size_t batch_size) {
  check_split(data, model.num_classes(), "evaluate_robust");
  if (batch_size == 0) throw std::invalid_argument("evaluate_robust: batch_size must be >= 1");
  RobustReport report;
  report.samples = data.size();
  report.clean_accuracy = accuracy(model, data, batch_size);
  for (std::size_t a = 0; a < suite.size(); ++a) {
    const AttackSpec& spec = suite[a];
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * (a + 1));
    AttackAccuracy acc{spec.name};
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < data.size(); lo += batch_size) {
      const std::size_t hi = std::min(data.size(), lo + batch_size);
      const Tensor x = data.x.slice_rows(lo, hi);
      const std::span<const int> y(data.y.data() + lo, hi - lo);
      const PerturbedBatch adv = run_attack(model, spec, x, y, rng);
      const Feasibility f = check_feasibility(x, adv.inputs, spec.config.epsilon);
      acc.ball_violations += f.ball_violations;
      acc.box_violations += f.box_violations;
      const std::vector<int> pred = nn::argmax_rows(model.forward(adv.inputs).logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
      for (double v : adv.loss) loss_sum += v;
    }
    if (data.size() > 0) {
      acc.robust_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
      acc.mean_loss = loss_sum / static_cast<double>(data.size());
    }
    report.attacks.push_back(std::move(acc));
  }
  return report;
}

TrainResult train(const TrainConfig& cfg, const Split& train_split, const Split& val_split,
                  nn::Network& model, const TrainHooks& hooks) {
  cfg.validate();
  const std::size_t classes = model.num_classes();
  check_split(train_split, classes, "train split");
  check_split(val_split, classes, "validation split");
  if (cfg.epochs > 0 && (train_split.size() == 0 || val_split.size() == 0)) {
    throw std::invalid_argument("train: training and validation splits must be non-empty");
  }

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  result.best = {-1, model.flat_parameters(), EpochMetrics{}, rng_state(rng)};
  result.last = result.best;
  if (cfg.epochs == 0) return result;

  const Atg graph(train_split.y, cfg.link_weights, classes);
  nn::Sgd opt(cfg.momentum, cfg.weight_decay);
  AttackConfig attack = cfg.attack;
  attack.loss = inner_attack_loss(cfg.adv.variant);
  const std::size_t n = train_split.size();
  std::vector<std::size_t> order(n);
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.schedule.at(epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double adv_sum = 0.0, fs_sum = 0.0;

    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + lo, std::min(n, lo + cfg.batch_size) - lo);
      const Tensor x = train_split.x.gather_rows(idx);
      const std::vector<int> y = labels_of(train_split, idx);
      PerturbedBatch adv;
      try {
        adv = pgd(model, x, y, attack, rng);
      } catch (const AttackError& e) {
        throw TrainingDiverged(epoch, "train: epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const BatchSubgraph sub = graph.subgraph_for_batch(idx);

      model.zero_grad();
      BatchObjective obj;
      try {
        obj = objective_backward(model, sub, x, adv.inputs, y, cfg);
      } catch (const std::invalid_argument& e) {
        throw TrainingDiverged(epoch, "train: epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(obj.total)) {
        throw TrainingDiverged(epoch, "train: non-finite objective at epoch " + std::to_string(epoch));
      }
      opt.step(model.parameters(), lr);
      adv_sum += obj.adv * static_cast<double>(idx.size());
      fs_sum += obj.fs * static_cast<double>(idx.size());
      if (hooks.on_step) hooks.on_step({epoch, step, lr, obj});
      ++step;
    }

    EpochMetrics m{epoch, lr, adv_sum / static_cast<double>(n), fs_sum / static_cast<double>(n)};
    m.val_clean_acc = accuracy(model, val_split);
    const RobustReport val = evaluate_robust(
        model, val_split, {{"selection", AttackKind::kPgd, cfg.selection_attack}},
        cfg.seed + static_cast<std::uint64_t>(epoch));
    m.val_robust_acc = val.attacks[0].robust_accuracy;
    result.state.history.push_back(m);
    result.state.epoch = epoch;
    if (m.val_robust_acc > result.state.best_val_robust_acc) {
      result.state.best_val_robust_acc = m.val_robust_acc;
      result.state.best_epoch = epoch;
      result.best = {epoch, model.flat_parameters(), m, rng_state(rng)};
    }
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  result.last = {cfg.epochs - 1, model.flat_parameters(), result.state.history.back(), rng_state(rng)};
  return result;
}

}  // namespace atfs
