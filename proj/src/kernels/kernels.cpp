#include "ampse/kernels.h"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace ampse::kernels {

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scal(double alpha, double* x, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scal(double alpha, double* x, std::size_t n);
}  // namespace neon
#endif

namespace {

struct Vtable {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scal)(double, double*, std::size_t);
  Backend backend;
};

constexpr Vtable kScalarTable{scalar::dot, scalar::axpy, scalar::scal,
                              Backend::scalar};

Vtable detect() {
  const char* env = std::getenv("AMP_SIMD");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return kScalarTable;
#if defined(__x86_64__) || defined(_M_X64)
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
    return Vtable{avx2::dot, avx2::axpy, avx2::scal, Backend::avx2};
  }
#endif
#if defined(__aarch64__)
  return Vtable{neon::dot, neon::axpy, neon::scal, Backend::neon};
#endif
  return kScalarTable;
}

std::atomic<const Vtable*> g_table{nullptr};

const Vtable& table() {
  const Vtable* t = g_table.load(std::memory_order_acquire);
  if (t == nullptr) {
    static const Vtable detected = detect();
    g_table.store(&detected, std::memory_order_release);
    t = &detected;
  }
  return *t;
}

}  // namespace

Backend active_backend() { return table().backend; }

const char* backend_name() {
  switch (active_backend()) {
    case Backend::avx2:
      return "avx2";
    case Backend::neon:
      return "neon";
    default:
      return "scalar";
  }
}

void force_backend(Backend b) {
  static Vtable forced;  // process-wide; tests only
  forced = kScalarTable;
#if defined(__x86_64__) || defined(_M_X64)
  if (b == Backend::avx2 && __builtin_cpu_supports("avx2") &&
      __builtin_cpu_supports("fma")) {
    forced = Vtable{avx2::dot, avx2::axpy, avx2::scal, Backend::avx2};
  }
#endif
#if defined(__aarch64__)
  if (b == Backend::neon) {
    forced = Vtable{neon::dot, neon::axpy, neon::scal, Backend::neon};
  }
#endif
  g_table.store(&forced, std::memory_order_release);
}

double dot(const double* a, const double* b, std::size_t n) {
  return table().dot(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  table().axpy(alpha, x, y, n);
}

void scal(double alpha, double* x, std::size_t n) {
  table().scal(alpha, x, n);
}

}  // namespace ampse::kernels
