#include "atfs/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "atfs/simd/kernels.hpp"

namespace atfs::nn {
namespace {

void he_normal(std::vector<double>& w, std::size_t fan_in, double gain,
               std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
  for (double& v : w) v = dist(rng);
}

void require_rank(const Tensor& x, std::size_t rank, const char* who) {
  if (x.rank() != rank) {
    throw std::invalid_argument(std::string(who) + ": expected rank-" +
                                std::to_string(rank) + " input, got " +
                                shape_string(x.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain)
    : in_(in), out_(out), weight_("weight", in * out), bias_("bias", out) {
  he_normal(weight_.value, in, gain, rng);
}

Tensor Dense::forward(const Tensor& x) {
  require_rank(x, 2, "dense");
  if (x.dim(1) != in_) {
    throw std::invalid_argument("dense: expected " + std::to_string(in_) +
                                " features, got " + std::to_string(x.dim(1)));
  }
  const std::size_t n = x.rows();
  input_ = x;
  Tensor y({n, out_});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(bias_.value.begin(), bias_.value.end(), y.row(r).begin());
  }
  simd::kernels().gemm_nt(n, out_, in_, x.data(), in_, weight_.value.data(), in_,
                          y.data(), out_);
  return y;
}

Tensor Dense::backward(const Tensor& grad_out, bool accumulate) {
  const std::size_t n = input_.rows();
  const auto& k = simd::kernels();
  Tensor dx({n, in_});
  k.gemm_nn(n, in_, out_, grad_out.data(), out_, weight_.value.data(), in_,
            dx.data(), in_);
  if (accumulate) {
    k.gemm_tn(out_, in_, n, grad_out.data(), out_, input_.data(), in_,
              weight_.grad.data(), in_);
    for (std::size_t r = 0; r < n; ++r) {
      const auto g = grad_out.row(r);
      for (std::size_t j = 0; j < out_; ++j) bias_.grad[j] += g[j];
    }
  }
  return dx;
}

Shape Dense::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] != in_) {
    throw std::invalid_argument("dense(" + std::to_string(in_) + "): incompatible input " +
                                shape_string(input));
  }
  return {out_};
}

std::string Dense::describe() const {
  return "dense(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding, std::mt19937_64& rng,
               double gain)
    : cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      weight_("weight", out_channels * in_channels * kernel * kernel),
      bias_("bias", out_channels) {
  if (stride == 0 || kernel == 0) throw std::invalid_argument("conv2d: zero kernel/stride");
  he_normal(weight_.value, in_channels * kernel * kernel, gain, rng);
}

void Conv2d::im2col(const double* img, std::size_t h, std::size_t w, double* col) const {
  const std::size_t ho = out_extent(h), wo = out_extent(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cin_; ++c) {
    for (std::size_t ky = 0; ky < k_; ++ky) {
      for (std::size_t kx = 0; kx < k_; ++kx, ++row) {
        double* dst = col + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) &&
                                ix < static_cast<long>(w);
            dst[oy * wo + ox] = inside ? img[(c * h + iy) * w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const double* col, std::size_t h, std::size_t w, double* img) const {
  const std::size_t ho = out_extent(h), wo = out_extent(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cin_; ++c) {
    for (std::size_t ky = 0; ky < k_; ++ky) {
      for (std::size_t kx = 0; kx < k_; ++kx, ++row) {
        const double* src = col + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            img[(c * h + iy) * w + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  require_rank(x, 4, "conv2d");
  if (x.dim(1) != cin_) throw std::invalid_argument("conv2d: channel mismatch");
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (h + 2 * pad_ < k_ || w + 2 * pad_ < k_) throw std::invalid_argument("conv2d: input too small");
  const std::size_t ho = out_extent(h), wo = out_extent(w);
  const std::size_t kk = cin_ * k_ * k_, p = ho * wo;
  input_shape_ = x.shape();
  cols_.assign(n * kk * p, 0.0);
  Tensor y({n, cout_, ho, wo});
  const auto& kern = simd::kernels();
  for (std::size_t s = 0; s < n; ++s) {
    double* col = cols_.data() + s * kk * p;
    im2col(x.data() + s * cin_ * h * w, h, w, col);
    double* out = y.data() + s * cout_ * p;
    for (std::size_t c = 0; c < cout_; ++c) {
      std::fill(out + c * p, out + (c + 1) * p, bias_.value[c]);
    }
    kern.gemm_nn(cout_, p, kk, weight_.value.data(), kk, col, p, out, p);
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out, bool accumulate) {
  const std::size_t n = input_shape_[0], h = input_shape_[2], w = input_shape_[3];
  const std::size_t ho = out_extent(h), wo = out_extent(w);
  const std::size_t kk = cin_ * k_ * k_, p = ho * wo;
  const auto& kern = simd::kernels();
  Tensor dx(input_shape_);
  std::vector<double> dcol(kk * p);
  for (std::size_t s = 0; s < n; ++s) {
    const double* dout = grad_out.data() + s * cout_ * p;
    const double* col = cols_.data() + s * kk * p;
    if (accumulate) {
      kern.gemm_nt(cout_, kk, p, dout, p, col, p, weight_.grad.data(), kk);
      for (std::size_t c = 0; c < cout_; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p; ++j) acc += dout[c * p + j];
        bias_.grad[c] += acc;
      }
    }
    std::fill(dcol.begin(), dcol.end(), 0.0);
    kern.gemm_tn(kk, p, cout_, weight_.value.data(), kk, dout, p, dcol.data(), p);
    col2im(dcol.data(), h, w, dx.data() + s * cin_ * h * w);
  }
  return dx;
}

Shape Conv2d::output_shape(const Shape& input) const {
  if (input.size() != 3 || input[0] != cin_ || input[1] + 2 * pad_ < k_ ||
      input[2] + 2 * pad_ < k_) {
    throw std::invalid_argument(describe() + ": incompatible input " + shape_string(input));
  }
  return {cout_, out_extent(input[1]), out_extent(input[2])};
}

std::string Conv2d::describe() const {
  return "conv2d(" + std::to_string(cin_) + "->" + std::to_string(cout_) + ", k" +
         std::to_string(k_) + ", s" + std::to_string(stride_) + ", p" +
         std::to_string(pad_) + ")";
}

// ---------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& x) {
  input_ = x;
  Tensor y(x.shape());
  simd::kernels().relu_forward(x.data(), y.data(), x.size());
  return y;
}

Tensor Relu::backward(const Tensor& grad_out, bool) {
  Tensor dx(input_.shape());
  simd::kernels().relu_backward(input_.data(), grad_out.data(), dx.data(), dx.size());
  return dx;
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x) {
  input_shape_ = x.shape();
  return x.reshaped({x.rows(), x.row_size()});
}

Tensor Flatten::backward(const Tensor& grad_out, bool) {
  return grad_out.reshaped(input_shape_);
}

Shape Flatten::output_shape(const Shape& input) const { return {shape_size(input)}; }

// ---------------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  input_shape_ = x.shape();
  const std::size_t n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < p; ++j) acc += x[i * p + j];
    y[i] = acc / static_cast<double>(p);
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out, bool) {
  Tensor dx(input_shape_);
  const std::size_t nc = input_shape_[0] * input_shape_[1];
  const std::size_t p = input_shape_[2] * input_shape_[3];
  const double inv = 1.0 / static_cast<double>(p);
  for (std::size_t i = 0; i < nc; ++i) {
    const double g = grad_out[i] * inv;
    std::fill(dx.data() + i * p, dx.data() + (i + 1) * p, g);
  }
  return dx;
}

Shape GlobalAvgPool::output_shape(const Shape& input) const {
  if (input.size() != 3) throw std::invalid_argument("global_avg_pool: needs [C,H,W]");
  return {input[0]};
}

// ---------------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(std::size_t in_channels, std::size_t out_channels,
                             std::size_t stride, std::mt19937_64& rng)
    : cin_(in_channels),
      cout_(out_channels),
      stride_(stride),
      conv1_(in_channels, out_channels, 3, stride, 1, rng),
      // No normalization layers, so the residual branch starts damped.
      conv2_(out_channels, out_channels, 3, 1, 1, rng, 0.5) {
  if (stride != 1 || in_channels != out_channels) {
    projection_ = std::make_unique<Conv2d>(in_channels, out_channels, 1, stride, 0, rng, 1.0);
  }
}

Tensor ResidualBlock::forward(const Tensor& x) {
  Tensor branch = conv2_.forward(relu1_.forward(conv1_.forward(x)));
  Tensor shortcut = projection_ ? projection_->forward(x) : x;
  for (std::size_t i = 0; i < branch.size(); ++i) branch[i] += shortcut[i];
  return relu_out_.forward(branch);
}

Tensor ResidualBlock::backward(const Tensor& grad_out, bool accumulate) {
  Tensor g = relu_out_.backward(grad_out, accumulate);
  Tensor dx = conv1_.backward(relu1_.backward(conv2_.backward(g, accumulate), accumulate),
                              accumulate);
  Tensor dshort = projection_ ? projection_->backward(g, accumulate) : g;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dshort[i];
  return dx;
}

Shape ResidualBlock::output_shape(const Shape& input) const {
  return conv2_.output_shape(conv1_.output_shape(input));
}

std::vector<Parameter*> ResidualBlock::parameters() {
  std::vector<Parameter*> out;
  for (Layer* l : {static_cast<Layer*>(&conv1_), static_cast<Layer*>(&conv2_),
                   static_cast<Layer*>(projection_.get())}) {
    if (l == nullptr) continue;
    for (Parameter* p : l->parameters()) out.push_back(p);
  }
  return out;
}

std::string ResidualBlock::describe() const {
  return "residual(" + std::to_string(cin_) + "->" + std::to_string(cout_) + ", s" +
         std::to_string(stride_) + ")";
}

}  // namespace atfs::nn
