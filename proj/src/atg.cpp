#include "atfs/atg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace atfs {

std::string_view link_kind_name(LinkKind kind) {
  switch (kind) {
    case LinkKind::kCleanAdversarial: return "ca";
    case LinkKind::kIntraClass: return "intra";
    case LinkKind::kNegative: return "negative";
  }
  return "unknown";
}

double LinkWeights::weight(LinkKind kind) const {
  switch (kind) {
    case LinkKind::kCleanAdversarial: return eta1;
    case LinkKind::kIntraClass: return eta2;
    case LinkKind::kNegative: return eta3;
  }
  return 0.0;
}

void LinkWeights::validate() const {
  const double w[] = {eta1, eta2, eta3};
  const char* names[] = {"eta1", "eta2", "eta3"};
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(w[i]) || w[i] < 0.0) {
      throw std::invalid_argument(std::string("link weight ") + names[i] +
                                  " must be finite and >= 0, got " + std::to_string(w[i]));
    }
  }
}

LinkKind BatchSubgraph::kind(std::size_t u, std::size_t v) const {
  if (counterpart(u) == v) return LinkKind::kCleanAdversarial;
  return labels_[u] == labels_[v] ? LinkKind::kIntraClass : LinkKind::kNegative;
}

Atg::Atg(std::vector<int> labels, LinkWeights weights, std::size_t num_classes)
    : labels_(std::move(labels)), weights_(weights) {
  if (labels_.empty()) throw std::invalid_argument("atg: label list is empty");
  weights_.validate();
  const int max_label = *std::max_element(labels_.begin(), labels_.end());
  const int min_label = *std::min_element(labels_.begin(), labels_.end());
  if (min_label < 0) throw std::invalid_argument("atg: negative label");
  if (num_classes == 0) num_classes = static_cast<std::size_t>(max_label) + 1;
  if (static_cast<std::size_t>(max_label) >= num_classes) {
    throw std::invalid_argument("atg: label " + std::to_string(max_label) +
                                " outside [0, " + std::to_string(num_classes) + ")");
  }
  class_sizes_.assign(num_classes, 0);
  for (int y : labels_) ++class_sizes_[static_cast<std::size_t>(y)];
}

void Atg::check_node(NodeId node) const {
  if (node.index >= node_count()) {
    throw std::out_of_range("atg: node " + std::to_string(node.index) + " outside [0, " +
                            std::to_string(node_count()) + ")");
  }
}

int Atg::label(NodeId node) const {
  check_node(node);
  return labels_[node.sample()];
}

LinkKind Atg::link_kind(NodeId u, NodeId v) const {
  check_node(u);
  check_node(v);
  if (u == v) throw std::invalid_argument("atg: self pair has no link");
  if (u.counterpart() == v) return LinkKind::kCleanAdversarial;
  return labels_[u.sample()] == labels_[v.sample()] ? LinkKind::kIntraClass
                                                    : LinkKind::kNegative;
}

NodeLinks Atg::links_of_node(NodeId node) const {
  check_node(node);
  NodeLinks out;
  const int y = labels_[node.sample()];
  out.ca.push_back(node.counterpart());
  const std::size_t same = 2 * class_sizes_[static_cast<std::size_t>(y)];
  out.intra.reserve(same - 2);
  out.negative.reserve(node_count() - same);
  for (std::size_t j = 0; j < node_count(); ++j) {
    const NodeId other{j};
    if (other == node || other == node.counterpart()) continue;
    if (labels_[other.sample()] == y) {
      out.intra.push_back(other);
    } else {
      out.negative.push_back(other);
    }
  }
  return out;
}

LinkCounts Atg::link_counts() const {
  LinkCounts c;
  const std::size_t n = sample_count();
  c.ca = n;
  for (std::size_t size : class_sizes_) {
    const std::size_t nodes = 2 * size;
    c.intra += nodes * (nodes - (nodes > 0 ? 1 : 0)) / 2 - size;
  }
  const std::size_t all = node_count() * (node_count() - 1) / 2;
  c.negative = all - c.ca - c.intra;
  return c;
}

BatchSubgraph Atg::subgraph_for_batch(std::span<const std::size_t> batch) const {
  if (batch.empty()) throw std::invalid_argument("atg: empty batch");
  std::vector<std::size_t> sorted(batch.begin(), batch.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("atg: duplicate sample index in batch");
  }
  if (sorted.back() >= sample_count()) {
    throw std::out_of_range("atg: sample index " + std::to_string(sorted.back()) +
                            " outside [0, " + std::to_string(sample_count()) + ")");
  }

  BatchSubgraph sub;
  const std::size_t b = batch.size();
  const std::size_t m = 2 * b;
  sub.samples_.assign(batch.begin(), batch.end());
  sub.nodes_.resize(m);
  sub.labels_.resize(m);
  for (std::size_t i = 0; i < b; ++i) {
    sub.nodes_[i] = NodeId::clean(batch[i]);
    sub.nodes_[b + i] = NodeId::adversarial(batch[i]);
    sub.labels_[i] = sub.labels_[b + i] = labels_[batch[i]];
  }
  sub.positive_degree_.assign(m, 0);
  for (std::size_t u = 0; u < m; ++u) {
    for (std::size_t v = u + 1; v < m; ++v) {
      const LinkKind k = sub.kind(u, v);
      const Link link{u, v, weights_.weight(k)};
      switch (k) {
        case LinkKind::kCleanAdversarial: sub.ca_.push_back(link); break;
        case LinkKind::kIntraClass: sub.intra_.push_back(link); break;
        case LinkKind::kNegative: sub.negative_.push_back(link); break;
      }
      if (k != LinkKind::kNegative) {
        ++sub.positive_degree_[u];
        ++sub.positive_degree_[v];
      }
    }
  }
  return sub;
}

}  // namespace atfs
