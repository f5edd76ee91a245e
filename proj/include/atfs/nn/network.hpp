#pragma once

#include <span>
#include <string>
#include <vector>

#include "atfs/nn/layers.hpp"
#include "atfs/tensor.hpp"

namespace atfs::nn {

struct ModelOutput {
  Tensor logits;    // [N, C]
  Tensor features;  // [N, F], the penultimate-layer output
};

// What attacks, training and analysis need from a model: a forward pass that
// exposes the penultimate features, and a backward pass through the cached
// forward that yields the input gradient.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual ModelOutput forward(const Tensor& x) = 0;
  // grad_features may be null. Parameter gradients are accumulated only when
  // `accumulate` is set.
  virtual Tensor backward(const Tensor& grad_logits, const Tensor* grad_features,
                          bool accumulate) = 0;
  virtual std::size_t num_classes() const = 0;
};

// trunk -> features -> linear head -> logits.
class Network final : public Classifier {
 public:
  Network(Shape input_shape, std::vector<LayerPtr> trunk, std::unique_ptr<Dense> head);

  ModelOutput forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_logits, const Tensor* grad_features,
                  bool accumulate) override;
  std::size_t num_classes() const override { return head_->out_features(); }

  const Shape& input_shape() const { return input_shape_; }
  std::size_t feature_dim() const { return head_->in_features(); }

  std::vector<Parameter*> parameters();
  std::size_t parameter_count();
  void zero_grad();

  std::vector<double> flat_parameters();
  void set_flat_parameters(std::span<const double> values);
  std::vector<double> flat_gradients();

  std::string describe() const;

 private:
  Shape input_shape_;
  std::vector<LayerPtr> trunk_;
  std::unique_ptr<Dense> head_;
};

}  // namespace atfs::nn
