#pragma once

// Inner-loop arithmetic kernels. Every kernel has a portable scalar reference
// and an AVX2+FMA variant; the active backend is chosen once at startup from
// the CPU feature set and may be overridden with EVE_SIMD=scalar|avx2 or
// set_backend(). All dense ops in eve::num route their loops through here.

#include <cstddef>
#include <string_view>

namespace eve::num::kernels {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend b) noexcept;
bool backend_available(Backend b) noexcept;
Backend active_backend() noexcept;
// Throws std::invalid_argument if the backend is not supported on this CPU.
void set_backend(Backend b);

float dot(const float* x, const float* y, std::size_t n) noexcept;
double dot(const double* x, const double* y, std::size_t n) noexcept;

// y += a * x
void axpy(float a, const float* x, float* y, std::size_t n) noexcept;
void axpy(double a, const double* x, double* y, std::size_t n) noexcept;

namespace scalar {
float dot(const float* x, const float* y, std::size_t n) noexcept;
double dot(const double* x, const double* y, std::size_t n) noexcept;
void axpy(float a, const float* x, float* y, std::size_t n) noexcept;
void axpy(double a, const double* x, double* y, std::size_t n) noexcept;
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define EVE_HAVE_AVX2_KERNELS 1
namespace avx2 {
float dot(const float* x, const float* y, std::size_t n) noexcept;
double dot(const double* x, const double* y, std::size_t n) noexcept;
void axpy(float a, const float* x, float* y, std::size_t n) noexcept;
void axpy(double a, const double* x, double* y, std::size_t n) noexcept;
}  // namespace avx2
#else
#define EVE_HAVE_AVX2_KERNELS 0
#endif

// RAII override, mostly for tests.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(active_backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

}  // namespace eve::num::kernels
