#pragma once

#include <span>
#include <vector>

#include "atfs/tensor.hpp"

namespace atfs::nn {

using Labels = std::vector<int>;

// Per-sample loss values plus the gradient of their batch mean w.r.t. the
// logits.
struct LossEval {
  std::vector<double> per_sample;
  Tensor grad;

  double mean() const;
};

// Row-wise numerically stable softmax / log-softmax.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

LossEval cross_entropy(const Tensor& logits, std::span<const int> labels);

// max_{j != y} z_j - z_y on raw logits.
LossEval cw_margin(const Tensor& logits, std::span<const int> labels);

// -log q_y - log(1.0001 - max_{k != y} q_k) with q = softmax(logits); the
// runner-up class is treated as a constant index.
LossEval boosted_cross_entropy(const Tensor& logits, std::span<const int> labels);

// KL(softmax(p_logits) || softmax(q_logits)) per row, with gradients of the
// batch mean w.r.t. both logit tensors.
struct KlEval {
  std::vector<double> per_sample;
  Tensor grad_p;
  Tensor grad_q;

  double mean() const;
};

KlEval kl_divergence(const Tensor& p_logits, const Tensor& q_logits);

std::vector<int> argmax_rows(const Tensor& logits);

void check_labels(const Tensor& logits, std::span<const int> labels);

}  // namespace atfs::nn
