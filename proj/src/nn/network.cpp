#include "atfs/nn/network.hpp"

#include <algorithm>
#include <stdexcept>

namespace atfs::nn {

Network::Network(Shape input_shape, std::vector<LayerPtr> trunk,
                 std::unique_ptr<Dense> head)
    : input_shape_(std::move(input_shape)), trunk_(std::move(trunk)), head_(std::move(head)) {
  Shape s = input_shape_;
  for (const auto& layer : trunk_) s = layer->output_shape(s);
  if (s.size() != 1 || s[0] != head_->in_features()) {
    throw std::invalid_argument("network: trunk output " + shape_string(s) +
                                " does not feed head " + head_->describe());
  }
}

ModelOutput Network::forward(const Tensor& x) {
  if (x.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), x.shape().begin() + 1)) {
    throw std::invalid_argument("network: expected input [N, " + shape_string(input_shape_) +
                                "], got " + shape_string(x.shape()));
  }
  Tensor h = x;
  for (auto& layer : trunk_) h = layer->forward(h);
  Tensor logits = head_->forward(h);
  return {std::move(logits), std::move(h)};
}

Tensor Network::backward(const Tensor& grad_logits, const Tensor* grad_features,
                         bool accumulate) {
  Tensor g = head_->backward(grad_logits, accumulate);
  if (grad_features != nullptr) {
    if (grad_features->size() != g.size()) {
      throw std::invalid_argument("network: feature gradient shape mismatch");
    }
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*grad_features)[i];
  }
  for (auto it = trunk_.rbegin(); it != trunk_.rend(); ++it) {
    g = (*it)->backward(g, accumulate);
  }
  return g;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : trunk_) {
    for (Parameter* p : layer->parameters()) out.push_back(p);
  }
  for (Parameter* p : head_->parameters()) out.push_back(p);
  return out;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (Parameter* p : parameters()) n += p->value.size();
  return n;
}

void Network::zero_grad() {
  for (Parameter* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::vector<double> Network::flat_parameters() {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (Parameter* p : parameters()) out.insert(out.end(), p->value.begin(), p->value.end());
  return out;
}

void Network::set_flat_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw std::invalid_argument("network: parameter blob has " + std::to_string(values.size()) +
                                " values, model expects " + std::to_string(parameter_count()));
  }
  std::size_t off = 0;
  for (Parameter* p : parameters()) {
    std::copy_n(values.begin() + off, p->value.size(), p->value.begin());
    off += p->value.size();
  }
}

std::vector<double> Network::flat_gradients() {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (Parameter* p : parameters()) out.insert(out.end(), p->grad.begin(), p->grad.end());
  return out;
}

std::string Network::describe() const {
  std::string s = "input" + shape_string(input_shape_);
  for (const auto& layer : trunk_) s += " -> " + layer->describe();
  return s + " => features -> " + head_->describe();
}

}  // namespace atfs::nn
