#pragma once

#include <cstddef>

namespace calibbench::kernels {

// Flat double-precision primitives behind every dense-matrix inner loop.
// Two implementations exist: a scalar reference and an AVX2 variant.
// The active table is resolved once at startup (CPU probe, overridable
// via CALIBBENCH_SIMD=auto|scalar|avx2 or set_backend()).
//
// Elementwise kernels (axpy/scal/vadd/vsub/vmul) are bit-identical across
// backends; reductions (dot/vsum) may differ in the last ulps because the
// vector variants accumulate in lanes.
struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
  void (*scal)(double alpha, double* x, std::size_t n);                   // x *= alpha
  void (*vadd)(const double* a, const double* b, double* out, std::size_t n);
  void (*vsub)(const double* a, const double* b, double* out, std::size_t n);
  void (*vmul)(const double* a, const double* b, double* out, std::size_t n);
  double (*vsum)(const double* x, std::size_t n);
  double (*vmax)(const double* x, std::size_t n);  // n >= 1
};

enum class Backend { Scalar, Avx2 };

const KernelTable& active();
Backend active_backend();
void set_backend(Backend backend);
bool avx2_available();
const char* backend_name(Backend backend);

namespace scalar {
extern const KernelTable table;
}

#if defined(CALIBBENCH_HAVE_AVX2)
namespace avx2 {
extern const KernelTable table;
}
#endif

}  // namespace calibbench::kernels
