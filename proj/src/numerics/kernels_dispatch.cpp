#include "eve/numerics/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace eve::num::kernels {

namespace {

struct Table {
  float (*dot_f32)(const float*, const float*, std::size_t) noexcept;
  double (*dot_f64)(const double*, const double*, std::size_t) noexcept;
  void (*axpy_f32)(float, const float*, float*, std::size_t) noexcept;
  void (*axpy_f64)(double, const double*, double*, std::size_t) noexcept;
};

constexpr Table kScalarTable{&scalar::dot, &scalar::dot, &scalar::axpy, &scalar::axpy};
#if EVE_HAVE_AVX2_KERNELS
constexpr Table kAvx2Table{&avx2::dot, &avx2::dot, &avx2::axpy, &avx2::axpy};
#endif

bool cpu_has_avx2() noexcept {
#if EVE_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  Backend b = cpu_has_avx2() ? Backend::kAvx2 : Backend::kScalar;
  if (const char* env = std::getenv("EVE_SIMD")) {
    const std::string v(env);
    if (v == "scalar") b = Backend::kScalar;
    else if (v == "avx2" && cpu_has_avx2()) b = Backend::kAvx2;
  }
  return b;
}

const Table& table_for(Backend b) noexcept {
#if EVE_HAVE_AVX2_KERNELS
  if (b == Backend::kAvx2) return kAvx2Table;
#endif
  return kScalarTable;
}

// Function-local statics give a well-defined first-use initialization order.
std::atomic<Backend>& active() {
  static std::atomic<Backend> backend{initial_backend()};
  return backend;
}

std::atomic<const Table*>& table() {
  static std::atomic<const Table*> t{&table_for(active().load())};
  return t;
}

}  // namespace

std::string_view backend_name(Backend b) noexcept {
  return b == Backend::kAvx2 ? "avx2" : "scalar";
}

bool backend_available(Backend b) noexcept {
  return b == Backend::kScalar || cpu_has_avx2();
}

Backend active_backend() noexcept { return active().load(); }

void set_backend(Backend b) {
  if (!backend_available(b)) {
    throw std::invalid_argument("kernel backend '" + std::string(backend_name(b)) +
                                "' is not supported on this CPU");
  }
  active().store(b);
  table().store(&table_for(b));
}

float dot(const float* x, const float* y, std::size_t n) noexcept {
  return table().load(std::memory_order_relaxed)->dot_f32(x, y, n);
}
double dot(const double* x, const double* y, std::size_t n) noexcept {
  return table().load(std::memory_order_relaxed)->dot_f64(x, y, n);
}
void axpy(float a, const float* x, float* y, std::size_t n) noexcept {
  table().load(std::memory_order_relaxed)->axpy_f32(a, x, y, n);
}
void axpy(double a, const double* x, double* y, std::size_t n) noexcept {
  table().load(std::memory_order_relaxed)->axpy_f64(a, x, y, n);
}

}  // namespace eve::num::kernels
