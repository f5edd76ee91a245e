#include "atfs/nn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace atfs::nn {
namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double LossEval::mean() const { return mean_of(per_sample); }
double KlEval::mean() const { return mean_of(per_sample); }

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw std::invalid_argument("loss: logits must be [N, C]");
  if (labels.size() != logits.rows()) {
    throw std::invalid_argument("loss: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(logits.rows()) + " rows");
  }
  const int c = static_cast<int>(logits.dim(1));
  for (int y : labels) {
    if (y < 0 || y >= c) throw std::out_of_range("loss: label " + std::to_string(y) + " out of range");
  }
}

Tensor log_softmax(const Tensor& logits) {
  Tensor out(logits.shape());
  const std::size_t c = logits.row_size();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    const double ls = std::log(s);
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) = (z[j] - m) - ls;
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  Tensor out = log_softmax(logits);
  for (double& v : out.values()) v = std::exp(v);
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    out[r] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

LossEval cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t n = logits.rows(), c = logits.dim(1);
  const Tensor logp = log_softmax(logits);
  LossEval out{std::vector<double>(n), Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    out.per_sample[r] = -logp.at(r, labels[r]);
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(logp.at(r, j));
      out.grad.at(r, j) = (p - (static_cast<int>(j) == labels[r] ? 1.0 : 0.0)) * inv_n;
    }
  }
  return out;
}

LossEval cw_margin(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t n = logits.rows(), c = logits.dim(1);
  if (c < 2) throw std::invalid_argument("cw_margin: needs at least two classes");
  LossEval out{std::vector<double>(n), Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    int best = -1;
    for (std::size_t j = 0; j < c; ++j) {
      if (static_cast<int>(j) == y) continue;
      if (best < 0 || logits.at(r, j) > logits.at(r, best)) best = static_cast<int>(j);
    }
    out.per_sample[r] = logits.at(r, best) - logits.at(r, y);
    out.grad.at(r, best) = inv_n;
    out.grad.at(r, y) = -inv_n;
  }
  return out;
}

LossEval boosted_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t n = logits.rows(), c = logits.dim(1);
  const Tensor q = softmax(logits);
  LossEval out{std::vector<double>(n), Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    int m = -1;
    for (std::size_t j = 0; j < c; ++j) {
      if (static_cast<int>(j) == y) continue;
      if (m < 0 || q.at(r, j) > q.at(r, m)) m = static_cast<int>(j);
    }
    const double qy = q.at(r, y);
    const double qm = m >= 0 ? q.at(r, m) : 0.0;
    const double margin = 1.0001 - qm;
    out.per_sample[r] = -std::log(qy) - std::log(margin);
    for (std::size_t j = 0; j < c; ++j) {
      const double qj = q.at(r, j);
      double g = qj - (static_cast<int>(j) == y ? 1.0 : 0.0);
      if (m >= 0) g += qm * ((static_cast<int>(j) == m ? 1.0 : 0.0) - qj) / margin;
      out.grad.at(r, j) = g * inv_n;
    }
  }
  return out;
}

KlEval kl_divergence(const Tensor& p_logits, const Tensor& q_logits) {
  if (p_logits.shape() != q_logits.shape() || p_logits.rank() != 2) {
    throw std::invalid_argument("kl_divergence: logit shapes differ");
  }
  const std::size_t n = p_logits.rows(), c = p_logits.dim(1);
  const Tensor logp = log_softmax(p_logits);
  const Tensor logq = log_softmax(q_logits);
  KlEval out{std::vector<double>(n), Tensor(p_logits.shape()), Tensor(q_logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> a(c), p(c);
  for (std::size_t r = 0; r < n; ++r) {
    double kl = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(logp.at(r, j));
      a[j] = logp.at(r, j) - logq.at(r, j);
      kl += p[j] * a[j];
    }
    out.per_sample[r] = kl;
    for (std::size_t j = 0; j < c; ++j) {
      out.grad_p.at(r, j) = p[j] * (a[j] - kl) * inv_n;
      out.grad_q.at(r, j) = (std::exp(logq.at(r, j)) - p[j]) * inv_n;
    }
  }
  return out;
}

}  // namespace atfs::nn
