#include "phasekit/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace phasekit::kern {

const Kernels* avx2_kernels_impl();
const Kernels* neon_kernels_impl();

namespace {

std::atomic<bool> g_force_scalar{false};

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Kernels* pick() {
    const char* env = std::getenv("PHASEKIT_SIMD");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return &scalar_kernels();
        if (std::strcmp(env, "avx2") == 0 && avx2_available()) return avx2_kernels_impl();
        if (std::strcmp(env, "neon") == 0 && neon_available()) return neon_kernels_impl();
    }
    if (avx2_available()) return avx2_kernels_impl();
    if (neon_available()) return neon_kernels_impl();
    return &scalar_kernels();
}

}  // namespace

bool avx2_available() { return avx2_kernels_impl() != nullptr && cpu_has_avx2(); }

bool neon_available() { return neon_kernels_impl() != nullptr; }

void force_scalar(bool on) { g_force_scalar.store(on); }

const Kernels& active() {
    static const Kernels* selected = pick();
    return g_force_scalar.load() ? scalar_kernels() : *selected;
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
    const Kernels& K = active();
    if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
    if (!trans_a && !trans_b) {
        // C[i,:] += A[i,l] * B[l,:]
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l) K.axpy(a[i * k + l], b + l * n, c + i * n, n);
    } else if (trans_a && !trans_b) {
        // A is k x m; C[i,:] += A[l,i] * B[l,:]
        for (std::size_t l = 0; l < k; ++l)
            for (std::size_t i = 0; i < m; ++i) K.axpy(a[l * m + i], b + l * n, c + i * n, n);
    } else if (!trans_a && trans_b) {
        // B is n x k; C[i,j] += dot(A[i,:], B[j,:])
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += K.dot(a + i * k, b + j * k, k);
    } else {
        // A is k x m, B is n x k
        for (std::size_t l = 0; l < k; ++l)
            for (std::size_t i = 0; i < m; ++i) {
                const double av = a[l * m + i];
                double* crow = c + i * n;
                const double* brow = b + l;  // stride k
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j * k];
            }
    }
}

}  // namespace phasekit::kern
