#include "atfs/data.hpp"

#include <stdexcept>

namespace atfs {

std::vector<std::size_t> label_histogram(const std::vector<int>& labels, std::size_t num_classes) {
  std::vector<std::size_t> h(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::out_of_range("label_histogram: label " + std::to_string(y) + " out of range");
    }
    ++h[static_cast<std::size_t>(y)];
  }
  return h;
}

}  // namespace atfs
