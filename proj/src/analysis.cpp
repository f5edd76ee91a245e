#include "atfs/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "atfs/fs_loss.hpp"
#include "atfs/nn/losses.hpp"

namespace atfs {

double SimilarityMatrix::mean_diagonal() const {
  double s = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < classes; ++i) {
    if (is_defined(i, i)) {
      s += at(i, i);
      ++k;
    }
  }
  return k ? s / static_cast<double>(k) : std::nan("");
}

double SimilarityMatrix::mean_off_diagonal() const {
  double s = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < classes; ++j) {
      if (i != j && is_defined(i, j)) {
        s += at(i, j);
        ++k;
      }
    }
  }
  return k ? s / static_cast<double>(k) : std::nan("");
}

SimilarityMatrix class_similarity_matrix(const Tensor& features, const std::vector<int>& labels,
                                         std::size_t num_classes) {
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("class_similarity_matrix: feature rows and labels differ");
  }
  const FeatureBatch fb = normalize_features(features);
  const std::size_t d = fb.dim(), c = num_classes;
  SimilarityMatrix m{c, Tensor({c, c}), std::vector<bool>(c * c, false), label_histogram(labels, c)};

  // Sum of h_a . h_b over a in i, b in j is sums_i . sums_j; the diagonal
  // subtracts the self terms ||h_a||^2.
  std::vector<double> sums(c * d, 0.0), self(c, 0.0);
  for (std::size_t r = 0; r < fb.rows(); ++r) {
    const std::size_t y = static_cast<std::size_t>(labels[r]);
    for (std::size_t k = 0; k < d; ++k) {
      sums[y * d + k] += fb.unit.at(r, k);
      self[y] += fb.unit.at(r, k) * fb.unit.at(r, k);
    }
  }
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += sums[i * d + k] * sums[j * d + k];
      const double ni = static_cast<double>(m.class_sizes[i]);
      const double nj = static_cast<double>(m.class_sizes[j]);
      const double pairs = i == j ? ni * (ni - 1.0) : ni * nj;
      if (pairs <= 0.0) {
        m.values.at(i, j) = std::nan("");
        continue;
      }
      const double v = (i == j ? dot - self[i] : dot) / pairs;
      m.values.at(i, j) = std::clamp(v, -1.0, 1.0);
      m.defined[i * c + j] = true;
    }
  }
  return m;
}

// ---- thickness -------------------------------------------------------------

void ThicknessConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < beta && beta <= 1.0)) {
    throw std::invalid_argument("thickness: need 0 <= alpha < beta <= 1");
  }
  if (pairs == 0 || segment_points == 0) {
    throw std::invalid_argument("thickness: pairs and segment_points must be >= 1");
  }
  if (!(attack.epsilon > 0.0) || !(attack.step_size > 0.0) || attack.steps < 0) {
    throw std::invalid_argument("thickness: invalid pairing attack");
  }
}

namespace {

Tensor l2_attack(nn::Classifier& model, const Tensor& x, const std::vector<int>& target,
                 const L2AttackConfig& cfg) {
  Tensor adv = x;
  const std::size_t n = x.rows(), d = x.row_size();
  for (int s = 0; s < cfg.steps; ++s) {
    const nn::ModelOutput out = model.forward(adv);
    const Tensor g = model.backward(nn::cross_entropy(out.logits, target).grad, nullptr, false);
    for (std::size_t r = 0; r < n; ++r) {
      double gn = 0.0;
      for (std::size_t k = 0; k < d; ++k) gn += g[r * d + k] * g[r * d + k];
      gn = std::sqrt(gn);
      if (!(gn > 0.0) || !std::isfinite(gn)) continue;
      double dn = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        adv[r * d + k] += cfg.step_size * g[r * d + k] / gn;
        const double delta = adv[r * d + k] - x[r * d + k];
        dn += delta * delta;
      }
      dn = std::sqrt(dn);
      const double shrink = dn > cfg.epsilon ? cfg.epsilon / dn : 1.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double v = x[r * d + k] + (adv[r * d + k] - x[r * d + k]) * shrink;
        adv[r * d + k] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return adv;
}

}  // namespace

std::vector<double> thickness_of_pairs(nn::Classifier& model, const Tensor& x1, const Tensor& x2,
                                       const std::vector<int>& c1, const std::vector<int>& c2,
                                       const ThicknessConfig& cfg) {
  cfg.validate();
  if (x1.shape() != x2.shape() || c1.size() != x1.rows() || c2.size() != x1.rows()) {
    throw std::invalid_argument("thickness_of_pairs: mismatched pair arrays");
  }
  const std::size_t n = x1.rows(), d = x1.row_size(), p = cfg.segment_points;
  Shape seg_shape = x1.shape();
  seg_shape[0] = p;
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Tensor seg(seg_shape);
    double dist = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x2[k * d + j] - x1[k * d + j];
      dist += diff * diff;
    }
    for (std::size_t t = 0; t < p; ++t) {
      const double s = p == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(p - 1);
      for (std::size_t j = 0; j < d; ++j) {
        seg[t * d + j] = x1[k * d + j] + s * (x2[k * d + j] - x1[k * d + j]);
      }
    }
    const Tensor prob = nn::softmax(model.forward(seg).logits);
    std::size_t inside = 0;
    for (std::size_t t = 0; t < p; ++t) {
      const double gap = prob.at(t, c1[k]) - prob.at(t, c2[k]);
      inside += gap > cfg.alpha && gap < cfg.beta;
    }
    out[k] = std::sqrt(dist) * static_cast<double>(inside) / static_cast<double>(p);
  }
  return out;
}

ThicknessResult boundary_thickness(nn::Classifier& model, const Split& data,
                                   const ThicknessConfig& cfg) {
  cfg.validate();
  ThicknessResult res;
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("boundary_thickness: empty dataset");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t budget = cfg.max_attempts == 0 ? n : std::min(n, cfg.max_attempts);

  // One sample at a time, so every pair is independent of which other
  // samples were drawn.
  for (std::size_t a = 0; a < budget && res.pairs_used < cfg.pairs; ++a) {
    const std::size_t idx = order[a];
    const Tensor x1 = data.x.slice_rows(idx, idx + 1);
    ++res.attempts;
    const int c1 = nn::argmax_rows(model.forward(x1).logits)[0];
    const Tensor x2 = l2_attack(model, x1, {c1}, cfg.attack);
    const int c2 = nn::argmax_rows(model.forward(x2).logits)[0];
    if (c2 == c1) continue;
    res.per_pair.push_back(thickness_of_pairs(model, x1, x2, {c1}, {c2}, cfg)[0]);
    ++res.pairs_used;
  }

  std::ostringstream diag;
  diag << res.pairs_used << " of " << cfg.pairs << " pairs from " << res.attempts << " attempts";
  res.diagnostics = diag.str();
  if (res.pairs_used == 0) {
    res.value = std::nan("");
    res.diagnostics = "no prediction-flipping pair found; " + res.diagnostics;
    return res;
  }
  // Sorted summation makes the mean independent of the sampling order.
  std::vector<double> sorted = res.per_pair;
  std::sort(sorted.begin(), sorted.end());
  res.value = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  res.defined = true;
  return res;
}

// ---- PCA -------------------------------------------------------------------

Pca2d pca_2d(const Tensor& features) {
  if (features.rank() != 2 || features.rows() < 2) {
    throw std::invalid_argument("pca_2d: need at least two feature rows");
  }
  const FeatureBatch fb = normalize_features(features);
  const std::size_t n = fb.rows(), d = fb.dim();
  Eigen::MatrixXd u(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < d; ++k) u(r, k) = fb.unit.at(r, k);
  const Eigen::RowVectorXd mean = u.colwise().mean();
  const Eigen::MatrixXd centered = u.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("pca_2d: eigendecomposition failed");

  Pca2d out;
  out.mean.assign(mean.data(), mean.data() + d);
  const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
  for (std::size_t k = 0; k < d; ++k) out.eigenvalues.push_back(std::max(0.0, values(d - 1 - k)));
  const double top = out.eigenvalues.empty() ? 0.0 : out.eigenvalues[0];
  out.coords = Tensor({n, 2});
  for (std::size_t a = 0; a < 2; ++a) {
    std::vector<double> axis(d, 0.0);
    if (a < d && top > 0.0 && out.eigenvalues[a] > 1e-12 * top) {
      const Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - a));
      std::size_t big = 0;
      for (std::size_t k = 1; k < d; ++k) {
        if (std::abs(v(k)) > std::abs(v(big))) big = k;
      }
      const double sign = v(big) < 0.0 ? -1.0 : 1.0;
      for (std::size_t k = 0; k < d; ++k) axis[k] = sign * v(k);
    }
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += centered(r, k) * axis[k];
      out.coords.at(r, a) = s;
    }
    out.axes.push_back(std::move(axis));
  }
  return out;
}

std::vector<FeaturePoint> export_features_2d(const Tensor& features, const std::vector<int>& labels,
                                             const std::vector<bool>& adversarial,
                                             std::vector<std::size_t> node_ids) {
  const std::size_t n = features.rows();
  if (labels.size() != n || adversarial.size() != n) {
    throw std::invalid_argument("export_features_2d: labels/kinds do not match feature rows");
  }
  if (node_ids.empty()) {
    node_ids.resize(n);
    std::iota(node_ids.begin(), node_ids.end(), 0);
  }
  if (node_ids.size() != n) throw std::invalid_argument("export_features_2d: node id count");
  const Pca2d pca = pca_2d(features);
  std::vector<FeaturePoint> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    out[r] = {node_ids[r], pca.coords.at(r, 0), pca.coords.at(r, 1), labels[r], adversarial[r]};
  }
  return out;
}

}  // namespace atfs
