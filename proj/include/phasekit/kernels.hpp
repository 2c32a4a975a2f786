#pragma once

#include <cstddef>
#include <string>

namespace phasekit::kern {

// Flat double-precision kernels behind every tensor inner loop. Each entry
// has a scalar reference implementation and, where the platform provides it,
// a SIMD variant selected once at startup. All kernels tolerate unaligned
// pointers and arbitrary lengths.
struct Kernels {
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*div)(const double* a, const double* b, double* out, std::size_t n);
    // out = alpha * x
    void (*scale)(double alpha, const double* x, double* out, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y += a * b (elementwise)
    void (*fma_acc)(const double* a, const double* b, double* y, std::size_t n);
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    double (*sum_sq)(const double* x, std::size_t n);
    const char* name;
};

const Kernels& scalar_kernels();

// Active kernel table. Picks AVX2/NEON when available unless overridden via
// PHASEKIT_SIMD=scalar|avx2|neon or force_scalar().
const Kernels& active();

bool avx2_available();
bool neon_available();

// Test hook: force the scalar reference path for the current process.
void force_scalar(bool on);

// Row-major GEMM built on the active kernels: C (m x n) = A op * B op,
// accumulating into C when accumulate is true.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate = false);

}  // namespace phasekit::kern
