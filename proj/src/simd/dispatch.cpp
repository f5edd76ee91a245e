#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "atfs/simd/kernels.hpp"

namespace atfs::simd {

#ifndef ATFS_HAVE_AVX2
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* table_for(Backend backend) {
  if (backend == Backend::kScalar) return &scalar_kernels();
  if (avx2_kernels() != nullptr && cpu_supports_avx2()) return avx2_kernels();
  return nullptr;
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("ATFS_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2") {
      if (const KernelTable* t = table_for(Backend::kAvx2)) return t;
      throw std::runtime_error("ATFS_SIMD=avx2 requested but AVX2 is unavailable");
    }
  }
  if (const KernelTable* t = table_for(Backend::kAvx2)) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& kernels() { return *active().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  const KernelTable* t = table_for(backend);
  if (t == nullptr) {
    throw std::runtime_error("kernel backend '" + std::string(backend_name(backend)) +
                             "' is not available on this build/CPU");
  }
  active().store(t, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::kScalar: return "scalar";
    case Backend::kAvx2: return "avx2";
  }
  return "unknown";
}

ScopedBackend::ScopedBackend(Backend backend) : previous_(kernels().backend) {
  set_backend(backend);
}

ScopedBackend::~ScopedBackend() { set_backend(previous_); }

}  // namespace atfs::simd
