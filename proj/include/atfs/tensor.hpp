#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace atfs {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Dimension 0 is always the batch axis.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  // Elements per batch row.
  std::size_t row_size() const { return rows() == 0 ? 0 : size() / rows(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * row_size() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * row_size() + c]; }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * row_size(), row_size()};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * row_size(), row_size()};
  }

  // Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  Tensor gather_rows(std::span<const std::size_t> indices) const;
  static Tensor concat_rows(const Tensor& a, const Tensor& b);

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace atfs
