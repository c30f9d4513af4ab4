#pragma once

#include <cstddef>

namespace ampse::kernels {

// Double-precision kernels for the tall-matrix inner loops. A scalar
// reference implementation always exists; on x86 an AVX2+FMA variant is
// selected at runtime (NEON on aarch64). The active backend is process-wide
// and can be pinned via force_backend() or the AMP_SIMD env var
// ("scalar" | "auto"), read once at first dispatch.

enum class Backend { scalar, avx2, neon };

Backend active_backend();
const char* backend_name();

/// Pins the backend. Requesting an unavailable backend falls back to scalar.
void force_backend(Backend b);

double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
void scal(double alpha, double* x, std::size_t n);                   // x *= alpha

// Reference implementations (plain loops); the equivalence tests compare the
// dispatched kernels against these.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scal(double alpha, double* x, std::size_t n);
}  // namespace scalar

}  // namespace ampse::kernels
