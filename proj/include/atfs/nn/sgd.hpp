#pragma once

#include <vector>

#include "atfs/nn/layers.hpp"

namespace atfs::nn {

// SGD with heavy-ball momentum and coupled L2 weight decay:
//   v <- momentum * v + (g + weight_decay * w)
//   w <- w - lr * v
// Momentum buffers start at zero and are bound to the parameter list order.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Parameter*>& params, double lr);

  const std::vector<std::vector<double>>& buffers() const { return buffers_; }
  void set_buffers(std::vector<std::vector<double>> buffers) { buffers_ = std::move(buffers); }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> buffers_;
};

}  // namespace atfs::nn
