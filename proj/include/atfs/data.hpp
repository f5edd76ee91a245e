#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "atfs/tensor.hpp"

namespace atfs {

// One labeled split. Inputs are [N, ...] in [0, 1]; source_index maps each
// row back to its position in the source dataset.
struct Split {
  Tensor x;
  std::vector<int> y;
  std::vector<std::size_t> source_index;

  std::size_t size() const { return y.size(); }
};

struct DatasetSplits {
  std::string name;
  Split train;
  Split val;
  Split test;
  std::size_t num_classes = 0;
  Shape input_shape;  // per sample
};

// Per-class counts over [0, num_classes).
std::vector<std::size_t> label_histogram(const std::vector<int>& labels, std::size_t num_classes);

}  // namespace atfs
