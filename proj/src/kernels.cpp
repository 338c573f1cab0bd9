#include "calibbench/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace calibbench::kernels {

namespace {

std::atomic<const KernelTable*> g_active{nullptr};
std::atomic<Backend> g_backend{Backend::Scalar};

Backend resolve_initial() {
  const char* env = std::getenv("CALIBBENCH_SIMD");
  if (env != nullptr && std::strlen(env) > 0) {
    if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!avx2_available()) throw std::runtime_error("CALIBBENCH_SIMD=avx2 but AVX2 is unavailable");
      return Backend::Avx2;
    }
    if (std::strcmp(env, "auto") != 0) {
      throw std::runtime_error("CALIBBENCH_SIMD must be one of auto|scalar|avx2");
    }
  }
  return avx2_available() ? Backend::Avx2 : Backend::Scalar;
}

const KernelTable* table_for(Backend backend) {
#if defined(CALIBBENCH_HAVE_AVX2)
  if (backend == Backend::Avx2) return &avx2::table;
#endif
  (void)backend;
  return &scalar::table;
}

void ensure_resolved() {
  if (g_active.load(std::memory_order_acquire) == nullptr) {
    Backend backend = resolve_initial();
    g_backend.store(backend, std::memory_order_relaxed);
    g_active.store(table_for(backend), std::memory_order_release);
  }
}

}  // namespace

bool avx2_available() {
#if defined(CALIBBENCH_HAVE_AVX2)
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

const KernelTable& active() {
  ensure_resolved();
  return *g_active.load(std::memory_order_acquire);
}

Backend active_backend() {
  ensure_resolved();
  return g_backend.load(std::memory_order_relaxed);
}

void set_backend(Backend backend) {
  if (backend == Backend::Avx2 && !avx2_available()) {
    throw std::runtime_error("AVX2 backend requested but not available on this CPU/build");
  }
  g_backend.store(backend, std::memory_order_relaxed);
  g_active.store(table_for(backend), std::memory_order_release);
}

const char* backend_name(Backend backend) {
  return backend == Backend::Avx2 ? "avx2" : "scalar";
}

}  // namespace calibbench::kernels
