#include "atfs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace atfs {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) throw std::out_of_range("slice_rows: bad range");
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t rs = row_size();
  return Tensor(std::move(s), std::vector<double>(data_.begin() + begin * rs,
                                                  data_.begin() + end * rs));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  Shape s = shape_;
  s[0] = indices.size();
  Tensor out(std::move(s));
  const std::size_t rs = row_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows()) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(data_.begin() + indices[i] * rs, rs, out.data_.begin() + i * rs);
  }
  return out;
}

Tensor Tensor::concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || !std::equal(a.shape_.begin() + 1, a.shape_.end(),
                                          b.shape_.begin() + 1)) {
    throw std::invalid_argument("concat_rows: shape mismatch " + shape_string(a.shape_) +
                                " vs " + shape_string(b.shape_));
  }
  Shape s = a.shape_;
  s[0] += b.rows();
  std::vector<double> v;
  v.reserve(a.size() + b.size());
  v.insert(v.end(), a.data_.begin(), a.data_.end());
  v.insert(v.end(), b.data_.begin(), b.data_.end());
  return Tensor(std::move(s), std::move(v));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace atfs
