#pragma once

// Feature-space diagnostics for a trained classifier.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "atfs/data.hpp"
#include "atfs/nn/network.hpp"
#include "atfs/tensor.hpp"

namespace atfs {

// ---- class similarity ------------------------------------------------------

// C x C mean cosine similarity of unit features between classes. Entry (i, j)
// averages h_a . h_b over all a in class i, b in class j; the diagonal skips
// self-pairs. Entries without any pair are NaN with defined = false.
struct SimilarityMatrix {
  std::size_t classes = 0;
  Tensor values;              // [C, C]
  std::vector<bool> defined;  // row-major, C * C
  std::vector<std::size_t> class_sizes;

  double at(std::size_t i, std::size_t j) const { return values.at(i, j); }
  bool is_defined(std::size_t i, std::size_t j) const { return defined[i * classes + j]; }
  // Means over the defined diagonal / off-diagonal entries.
  double mean_diagonal() const;
  double mean_off_diagonal() const;
};

SimilarityMatrix class_similarity_matrix(const Tensor& features, const std::vector<int>& labels,
                                         std::size_t num_classes);

// ---- boundary thickness ----------------------------------------------------

// Straight-segment L2 attack that pairs each clean input with a point across
// the decision boundary: untargeted CE ascent on the clean prediction,
// normalized gradient steps, projection onto the L2 ball and the [0,1] box.
struct L2AttackConfig {
  double epsilon = 1.0;
  double step_size = 0.2;
  int steps = 20;
};

struct ThicknessConfig {
  double alpha = 0.0;
  double beta = 0.75;
  std::size_t pairs = 320;
  std::size_t segment_points = 128;
  L2AttackConfig attack;
  // Candidates tried before giving up; 0 means every sample once.
  std::size_t max_attempts = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ThicknessResult {
  bool defined = false;
  double value = 0.0;  // NaN when undefined
  std::size_t pairs_used = 0;
  std::size_t attempts = 0;
  std::vector<double> per_pair;
  std::string diagnostics;
};

// Thickness of explicit segments x1[k] -> x2[k] between classes c1[k], c2[k]:
// ||x1 - x2|| times the fraction of segment_points evenly spaced points
// (endpoints included) where alpha < p_c1 - p_c2 < beta.
std::vector<double> thickness_of_pairs(nn::Classifier& model, const Tensor& x1, const Tensor& x2,
                                       const std::vector<int>& c1, const std::vector<int>& c2,
                                       const ThicknessConfig& cfg);

// Walks a seeded permutation of the samples, pairs each with its L2 attack
// point, keeps pairs whose prediction flips, and averages their thickness.
ThicknessResult boundary_thickness(nn::Classifier& model, const Split& data,
                                   const ThicknessConfig& cfg);

// ---- 2-D export ------------------------------------------------------------

struct Pca2d {
  std::vector<double> mean;              // [D]
  std::vector<std::vector<double>> axes;  // two unit vectors of length D (zero if padded)
  std::vector<double> eigenvalues;        // all D, descending
  Tensor coords;                          // [N, 2]
};

// PCA of the row-normalized features. Each axis is oriented so that its
// largest-magnitude entry is positive; axes with a relative eigenvalue below
// 1e-12 are replaced by zero and yield coordinate 0.
Pca2d pca_2d(const Tensor& features);

struct FeaturePoint {
  std::size_t node_id = 0;
  double x = 0.0;
  double y = 0.0;
  int label = 0;
  bool adversarial = false;
};

// Rows of `features` are nodes; node_ids default to 0..N-1.
std::vector<FeaturePoint> export_features_2d(const Tensor& features, const std::vector<int>& labels,
                                             const std::vector<bool>& adversarial,
                                             std::vector<std::size_t> node_ids = {});

// ---- files -----------------------------------------------------------------

void write_features_csv(const std::filesystem::path& path, const std::vector<FeaturePoint>& points);
std::vector<FeaturePoint> read_features_csv(const std::filesystem::path& path);

// node_id,label,kind,f0..f{D-1}
void write_raw_features_csv(const std::filesystem::path& path, const Tensor& features,
                            const std::vector<int>& labels, const std::vector<bool>& adversarial);

// Header row "class,0,1,...", then one row per class; undefined entries are
// written as "nan".
void write_similarity_csv(const std::filesystem::path& path, const SimilarityMatrix& m);
SimilarityMatrix read_similarity_csv(const std::filesystem::path& path);

// Binary PGM heatmap, one cell_px square per entry, similarity -1 -> black,
// 1 -> white, undefined -> mid gray.
void write_similarity_pgm(const std::filesystem::path& path, const SimilarityMatrix& m,
                          std::size_t cell_px = 16);

}  // namespace atfs
