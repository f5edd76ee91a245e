#pragma once

// Numeric inner loops used by the network, attack and optimizer code.
//
// Every kernel has a scalar reference implementation and, when the build
// and the CPU allow it, an AVX2/FMA variant. The active table is picked once
// at startup (override with ATFS_SIMD=scalar|avx2) and can be swapped by
// tests to check the variants against each other.
//
// Elementwise kernels (relu, sign_step_project, sgd_momentum) are bit-exact
// across backends. Reductions (dot, gemm) differ only by summation order and
// FMA rounding.

#include <cstddef>
#include <string_view>

namespace atfs::simd {

enum class Backend { kScalar, kAvx2 };

struct KernelTable {
  Backend backend;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // Row-major GEMMs accumulating into C (m x n). ld* are row strides.
  // C += A * B        A: m x k, B: k x n
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc);
  // C += A * B^T      A: m x k, B: n x k
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc);
  // C += A^T * B      A: k x m, B: k x n
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc);

  void (*relu_forward)(const double* x, double* y, std::size_t n);
  // dx = x > 0 ? dy : 0
  void (*relu_backward)(const double* x, const double* dy, double* dx,
                        std::size_t n);

  // One signed-gradient ascent step followed by projection onto the L-inf
  // ball around x0 and the [0,1] box:
  //   x_adv = clip01(clip(x_adv + step * sign(grad), x0 - eps, x0 + eps))
  void (*sign_step_project)(double* x_adv, const double* grad, const double* x0,
                            double step, double eps, std::size_t n);

  // SGD with momentum and L2 weight decay (dampening 0, no Nesterov):
  //   v = momentum * v + (g + wd * w);  w -= lr * v
  void (*sgd_momentum)(double* w, const double* g, double* v, double lr,
                       double momentum, double weight_decay, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the AVX2 variants were not compiled in.
const KernelTable* avx2_kernels();

bool cpu_supports_avx2();

// The table all library code dispatches through.
const KernelTable& kernels();

// Throws std::runtime_error if the backend is unavailable on this build/CPU.
void set_backend(Backend backend);

std::string_view backend_name(Backend backend);

// RAII backend override for tests.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend backend);
  ~ScopedBackend();
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

}  // namespace atfs::simd
