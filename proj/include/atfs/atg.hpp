#pragma once

// Adversarial training graph: a signed complete graph over the clean samples
// of a labeled dataset and their adversarial counterparts.
//
// Node 2i is clean sample i, node 2i+1 its adversarial counterpart; both carry
// label y_i. Every unordered node pair is exactly one of
//   ca        (2i, 2i+1)                         weight eta1
//   intra     same class, not a ca pair         weight eta2
//   negative  different class                   weight eta3
// The full graph is never materialized; links are derived from labels on
// demand and only minibatch subgraphs are stored explicitly.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace atfs {

enum class LinkKind { kCleanAdversarial, kIntraClass, kNegative };

std::string_view link_kind_name(LinkKind kind);

struct NodeId {
  std::size_t index = 0;

  static NodeId clean(std::size_t sample) { return {2 * sample}; }
  static NodeId adversarial(std::size_t sample) { return {2 * sample + 1}; }

  std::size_t sample() const { return index / 2; }
  bool is_adversarial() const { return (index & 1u) != 0; }
  NodeId counterpart() const { return {index ^ 1u}; }

  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct LinkWeights {
  double eta1 = 1.0;  // ca
  double eta2 = 1.0;  // intra
  double eta3 = 1.0;  // negative; carried for completeness, unused by the loss

  double weight(LinkKind kind) const;
  // Throws std::invalid_argument unless every weight is finite and >= 0.
  void validate() const;
};

struct NodeLinks {
  std::vector<NodeId> ca;
  std::vector<NodeId> intra;
  std::vector<NodeId> negative;
};

struct LinkCounts {
  std::size_t ca = 0;
  std::size_t intra = 0;
  std::size_t negative = 0;

  std::size_t total() const { return ca + intra + negative; }
};

// Links are stored with batch-local endpoints, u < v.
struct Link {
  std::size_t u = 0;
  std::size_t v = 0;
  double weight = 0.0;
};

// Induced subgraph of one minibatch. Local node order is all clean nodes in
// batch order followed by all adversarial nodes in batch order, i.e. the row
// order of a forward pass over concat(x, x_adv).
class BatchSubgraph {
 public:
  std::size_t batch_size() const { return samples_.size(); }
  std::size_t node_count() const { return nodes_.size(); }

  const std::vector<std::size_t>& samples() const { return samples_; }
  const std::vector<NodeId>& nodes() const { return nodes_; }
  int label(std::size_t local) const { return labels_[local]; }
  const std::vector<int>& labels() const { return labels_; }

  std::size_t counterpart(std::size_t local) const {
    const std::size_t b = batch_size();
    return local < b ? local + b : local - b;
  }
  LinkKind kind(std::size_t u, std::size_t v) const;

  const std::vector<Link>& ca_links() const { return ca_; }
  const std::vector<Link>& intra_links() const { return intra_; }
  const std::vector<Link>& negative_links() const { return negative_; }

  // |E+(i)| = |E+_ca(i)| + |E+_intra(i)| within the batch; always >= 1.
  std::size_t positive_degree(std::size_t local) const { return positive_degree_[local]; }

 private:
  friend class Atg;

  std::vector<std::size_t> samples_;
  std::vector<NodeId> nodes_;
  std::vector<int> labels_;
  std::vector<Link> ca_, intra_, negative_;
  std::vector<std::size_t> positive_degree_;
};

class Atg {
 public:
  // num_classes == 0 infers C = max(label) + 1. Throws std::invalid_argument on
  // an empty label list, a label outside [0, C) or an invalid weight.
  Atg(std::vector<int> labels, LinkWeights weights, std::size_t num_classes = 0);

  std::size_t sample_count() const { return labels_.size(); }
  std::size_t node_count() const { return 2 * labels_.size(); }
  std::size_t num_classes() const { return class_sizes_.size(); }
  const LinkWeights& weights() const { return weights_; }
  const std::vector<int>& labels() const { return labels_; }

  int label(NodeId node) const;
  // u != v; both in range.
  LinkKind link_kind(NodeId u, NodeId v) const;

  // Partition of the other 2n-1 nodes by link kind, in ascending node order.
  NodeLinks links_of_node(NodeId node) const;

  // Closed-form link counts over the whole graph.
  LinkCounts link_counts() const;

  // Throws std::invalid_argument on a duplicate index, std::out_of_range on
  // an index >= n.
  BatchSubgraph subgraph_for_batch(std::span<const std::size_t> batch) const;

 private:
  void check_node(NodeId node) const;

  std::vector<int> labels_;
  LinkWeights weights_;
  std::vector<std::size_t> class_sizes_;
};

}  // namespace atfs
