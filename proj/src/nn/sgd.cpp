#include "atfs/nn/sgd.hpp"

#include <stdexcept>

#include "atfs/simd/kernels.hpp"

namespace atfs::nn {

void Sgd::step(const std::vector<Parameter*>& params, double lr) {
  if (buffers_.empty()) {
    buffers_.reserve(params.size());
    for (const Parameter* p : params) buffers_.emplace_back(p->value.size(), 0.0);
  }
  if (buffers_.size() != params.size()) {
    throw std::logic_error("sgd: parameter list changed between steps");
  }
  const auto& k = simd::kernels();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (buffers_[i].size() != p.value.size()) throw std::logic_error("sgd: buffer size mismatch");
    k.sgd_momentum(p.value.data(), p.grad.data(), buffers_[i].data(), lr, momentum_,
                   weight_decay_, p.value.size());
  }
}

}  // namespace atfs::nn
