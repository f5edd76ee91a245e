#pragma once

// Feature separability loss over a minibatch subgraph.
//
// With unit features h_i and s_ij = h_i.h_j / tau, every node i defines a
// softmax over all of its incident links in the batch:
//
//   p_ij = exp(s_ij) / S_i,      S_i = sum_{j != i} exp(s_ij)
//
// The normalizer is unweighted and spans positive and negative links alike.
// The per-node value is the weighted mean log-likelihood of its positive
// links,
//
//   L_i = (1/|E+(i)|) * (eta1 * sum_ca log p_ij + eta2 * sum_intra log p_ij)
//
// and the batch value is the arithmetic mean over nodes. It is a
// log-likelihood (<= 0 for non-negative weights) and is maximized.

#include <cstddef>
#include <vector>

#include "atfs/atg.hpp"
#include "atfs/tensor.hpp"

namespace atfs {

inline constexpr double kFeatureNormGuard = 1e-12;

// Penultimate features and their row-normalized form
//   unit = raw / max(||raw||_2, kFeatureNormGuard).
struct FeatureBatch {
  Tensor raw;
  Tensor unit;
  std::vector<double> norms;

  std::size_t rows() const { return raw.rows(); }
  std::size_t dim() const { return raw.row_size(); }
};

// Throws std::invalid_argument on an empty matrix or non-finite entries.
FeatureBatch normalize_features(const Tensor& raw);

struct FsOptions {
  // Divides inner products before exp(). 1 reproduces the plain formula.
  double temperature = 1.0;
};

struct IncidentLink {
  std::size_t neighbor = 0;  // batch-local node
  LinkKind kind = LinkKind::kNegative;
  double probability = 0.0;
};

// Probabilities of every link incident to `node` (batch-local index), in
// ascending neighbor order. They sum to 1.
std::vector<IncidentLink> link_probabilities(const FeatureBatch& features,
                                             const BatchSubgraph& sub, std::size_t node,
                                             const FsOptions& options = {});

struct FsLossValue {
  double total = 0.0;
  std::vector<double> per_node;
  // m x m, entry (i, j) = p_ij; the diagonal is zero.
  Tensor probabilities;
};

FsLossValue fs_loss_batch(const FeatureBatch& features, const BatchSubgraph& sub,
                          const LinkWeights& weights, const FsOptions& options = {});

struct FsLossGradient {
  FsLossValue value;
  Tensor grad_raw;  // d(total) / d(raw features), same shape as raw
};

FsLossGradient fs_loss_with_grad(const FeatureBatch& features, const BatchSubgraph& sub,
                                 const LinkWeights& weights, const FsOptions& options = {});

}  // namespace atfs
