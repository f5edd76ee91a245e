#include "atfs/fs_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "atfs/simd/kernels.hpp"

namespace atfs {
namespace {

void check_aligned(const FeatureBatch& features, const BatchSubgraph& sub) {
  if (features.rows() != sub.node_count()) {
    throw std::invalid_argument("fs_loss: " + std::to_string(features.rows()) +
                                " feature rows for " + std::to_string(sub.node_count()) +
                                " subgraph nodes");
  }
  if (sub.node_count() < 2) throw std::invalid_argument("fs_loss: isolated node");
}

void check_options(const FsOptions& options) {
  if (!(options.temperature > 0.0) || !std::isfinite(options.temperature)) {
    throw std::invalid_argument("fs_loss: temperature must be positive");
  }
}

// Scaled similarities s = U U^T / tau and the per-row log-normalizers over
// off-diagonal entries.
struct Similarities {
  Tensor s;
  std::vector<double> log_norm;
};

Similarities similarities(const FeatureBatch& f, const FsOptions& options) {
  const std::size_t m = f.rows(), d = f.dim();
  Similarities out{Tensor({m, m}), std::vector<double>(m)};
  simd::kernels().gemm_nt(m, m, d, f.unit.data(), d, f.unit.data(), d, out.s.data(), m);
  const double inv_t = 1.0 / options.temperature;
  for (double& v : out.s.values()) v *= inv_t;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i && out.s.at(i, j) > mx) mx = out.s.at(i, j);
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) acc += std::exp(out.s.at(i, j) - mx);
    }
    out.log_norm[i] = mx + std::log(acc);
  }
  return out;
}

double positive_weight(const BatchSubgraph& sub, const LinkWeights& w, std::size_t i,
                       std::size_t j) {
  switch (sub.kind(i, j)) {
    case LinkKind::kCleanAdversarial: return w.eta1;
    case LinkKind::kIntraClass: return w.eta2;
    case LinkKind::kNegative: return 0.0;
  }
  return 0.0;
}

FsLossValue evaluate(const FeatureBatch& f, const BatchSubgraph& sub, const LinkWeights& w,
                     const Similarities& sim) {
  const std::size_t m = f.rows();
  FsLossValue out{0.0, std::vector<double>(m), Tensor({m, m})};
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      const double logp = sim.s.at(i, j) - sim.log_norm[i];
      out.probabilities.at(i, j) = std::exp(logp);
      const double wij = positive_weight(sub, w, i, j);
      if (wij != 0.0) acc += wij * logp;
    }
    out.per_node[i] = acc / static_cast<double>(sub.positive_degree(i));
    out.total += out.per_node[i];
  }
  out.total /= static_cast<double>(m);
  return out;
}

}  // namespace

FeatureBatch normalize_features(const Tensor& raw) {
  if (raw.rank() != 2 || raw.rows() == 0 || raw.row_size() == 0) {
    throw std::invalid_argument("normalize_features: expected a non-empty [N, D] matrix, got " +
                                shape_string(raw.shape()));
  }
  if (!raw.all_finite()) throw std::invalid_argument("normalize_features: non-finite feature");
  FeatureBatch fb{raw, Tensor(raw.shape()), std::vector<double>(raw.rows())};
  const std::size_t d = raw.row_size();
  const auto& k = simd::kernels();
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    const double* row = raw.data() + r * d;
    fb.norms[r] = std::sqrt(k.dot(row, row, d));
    const double scale = 1.0 / std::max(fb.norms[r], kFeatureNormGuard);
    for (std::size_t c = 0; c < d; ++c) fb.unit.at(r, c) = row[c] * scale;
  }
  return fb;
}

std::vector<IncidentLink> link_probabilities(const FeatureBatch& features,
                                             const BatchSubgraph& sub, std::size_t node,
                                             const FsOptions& options) {
  check_aligned(features, sub);
  check_options(options);
  if (node >= sub.node_count()) throw std::out_of_range("link_probabilities: node not in batch");
  const std::size_t m = features.rows(), d = features.dim();
  const auto& k = simd::kernels();
  const double* ui = features.unit.data() + node * d;
  std::vector<double> s(m);
  double mx = -INFINITY;
  for (std::size_t j = 0; j < m; ++j) {
    if (j == node) continue;
    s[j] = k.dot(ui, features.unit.data() + j * d, d) / options.temperature;
    mx = std::max(mx, s[j]);
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (j != node) acc += std::exp(s[j] - mx);
  }
  const double log_norm = mx + std::log(acc);
  std::vector<IncidentLink> out;
  out.reserve(m - 1);
  for (std::size_t j = 0; j < m; ++j) {
    if (j == node) continue;
    out.push_back({j, sub.kind(node, j), std::exp(s[j] - log_norm)});
  }
  return out;
}

FsLossValue fs_loss_batch(const FeatureBatch& features, const BatchSubgraph& sub,
                          const LinkWeights& weights, const FsOptions& options) {
  check_aligned(features, sub);
  check_options(options);
  weights.validate();
  return evaluate(features, sub, weights, similarities(features, options));
}

FsLossGradient fs_loss_with_grad(const FeatureBatch& features, const BatchSubgraph& sub,
                                 const LinkWeights& weights, const FsOptions& options) {
  check_aligned(features, sub);
  check_options(options);
  weights.validate();
  const Similarities sim = similarities(features, options);
  FsLossGradient out{evaluate(features, sub, weights, sim), Tensor(features.raw.shape())};

  const std::size_t m = features.rows(), d = features.dim();
  // A_ij = d total / d s_ij = (w_ij [j in E+(i)] - W_i p_ij) / (m |E+(i)|),
  // where W_i is the summed positive weight of node i.
  Tensor a({m, m});
  for (std::size_t i = 0; i < m; ++i) {
    double w_sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) w_sum += positive_weight(sub, weights, i, j);
    }
    const double scale =
        1.0 / (static_cast<double>(m) * static_cast<double>(sub.positive_degree(i)));
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      a.at(i, j) = (positive_weight(sub, weights, i, j) -
                    w_sum * out.value.probabilities.at(i, j)) * scale;
    }
  }
  // d total / d U = (A + A^T) U / tau
  Tensor sym({m, m});
  const double inv_t = 1.0 / options.temperature;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) sym.at(i, j) = (a.at(i, j) + a.at(j, i)) * inv_t;
  }
  Tensor grad_unit({m, d});
  const auto& k = simd::kernels();
  k.gemm_nn(m, d, m, sym.data(), m, features.unit.data(), d, grad_unit.data(), d);

  // Back through u = r / max(||r||, guard).
  for (std::size_t r = 0; r < m; ++r) {
    const double* g = grad_unit.data() + r * d;
    double* out_row = out.grad_raw.data() + r * d;
    const double norm = features.norms[r];
    if (norm > kFeatureNormGuard) {
      const double* u = features.unit.data() + r * d;
      const double ug = k.dot(u, g, d);
      for (std::size_t c = 0; c < d; ++c) out_row[c] = (g[c] - u[c] * ug) / norm;
    } else {
      for (std::size_t c = 0; c < d; ++c) out_row[c] = g[c] / kFeatureNormGuard;
    }
  }
  return out;
}

}  // namespace atfs
