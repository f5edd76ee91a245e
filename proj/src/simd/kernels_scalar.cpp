#include "atfs/simd/kernels.hpp"

namespace atfs::simd {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * ldc + j] += dot(a + i * lda, b + j * ldb, k);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * lda;
    const double* brow = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = arow[i];
      double* crow = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

void relu_forward(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx,
                   std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void sign_step_project(double* x_adv, const double* grad, const double* x0,
                       double step, double eps, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    double v = x_adv[i] + step * s;
    const double lo = x0[i] - eps;
    const double hi = x0[i] + eps;
    v = v < lo ? lo : v;
    v = v > hi ? hi : v;
    v = v < 0.0 ? 0.0 : v;
    v = v > 1.0 ? 1.0 : v;
    x_adv[i] = v;
  }
}

void sgd_momentum(double* w, const double* g, double* v, double lr,
                  double momentum, double weight_decay, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double d = g[i] + weight_decay * w[i];
    v[i] = momentum * v[i] + d;
    w[i] = w[i] - lr * v[i];
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      Backend::kScalar, "scalar",     &dot,
      &axpy,            &gemm_nn,     &gemm_nt,
      &gemm_tn,         &relu_forward, &relu_backward,
      &sign_step_project, &sgd_momentum,
  };
  return table;
}

}  // namespace atfs::simd
