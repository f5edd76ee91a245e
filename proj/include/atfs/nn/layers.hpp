#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "atfs/tensor.hpp"

namespace atfs::nn {

struct Parameter {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;

  Parameter(std::string n, std::size_t size)
      : name(std::move(n)), value(size, 0.0), grad(size, 0.0) {}
};

// A differentiable layer. forward() caches whatever backward() needs, so a
// layer instance serves one forward/backward pair at a time.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x) = 0;
  // Returns d(loss)/d(input). Parameter gradients are accumulated only when
  // `accumulate` is set; attacks only need the input gradient.
  virtual Tensor backward(const Tensor& grad_out, bool accumulate) = 0;

  // Per-sample output shape (no batch axis) for a per-sample input shape.
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual std::string describe() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

class Dense final : public Layer {
 public:
  // weight: out x in, He-normal with the given gain; bias zero.
  Dense(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 2.0);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool accumulate) override;
  Shape output_shape(const Shape& input) const override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::string describe() const override;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  std::size_t in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t padding, std::mt19937_64& rng,
         double gain = 2.0);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool accumulate) override;
  Shape output_shape(const Shape& input) const override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::string describe() const override;

 private:
  std::size_t out_extent(std::size_t in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }
  void im2col(const double* img, std::size_t h, std::size_t w, double* col) const;
  void col2im(const double* col, std::size_t h, std::size_t w, double* img) const;

  std::size_t cin_, cout_, k_, stride_, pad_;
  Parameter weight_, bias_;
  Shape input_shape_;
  std::vector<double> cols_;
};

class Relu final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool accumulate) override;
  Shape output_shape(const Shape& input) const override { return input; }
  std::string describe() const override { return "relu"; }

 private:
  Tensor input_;
};

class Flatten final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool accumulate) override;
  Shape output_shape(const Shape& input) const override;
  std::string describe() const override { return "flatten"; }

 private:
  Shape input_shape_;
};

class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool accumulate) override;
  Shape output_shape(const Shape& input) const override;
  std::string describe() const override { return "global_avg_pool"; }

 private:
  Shape input_shape_;
};

// relu(conv3x3(relu(conv3x3(x))) + shortcut(x)); the shortcut is a strided
// 1x1 convolution when the shape changes.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels,
                std::size_t stride, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool accumulate) override;
  Shape output_shape(const Shape& input) const override;
  std::vector<Parameter*> parameters() override;
  std::string describe() const override;

 private:
  std::size_t cin_, cout_, stride_;
  Conv2d conv1_;
  Relu relu1_;
  Conv2d conv2_;
  std::unique_ptr<Conv2d> projection_;
  Relu relu_out_;
};

}  // namespace atfs::nn
