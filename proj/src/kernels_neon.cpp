#include "phasekit/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

namespace phasekit::kern {
namespace {

void v_add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}
void v_sub(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}
void v_mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}
void v_div(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vdivq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] / b[i];
}
void v_scale(double alpha, const double* x, double* out, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(va, vld1q_f64(x + i)));
    for (; i < n; ++i) out[i] = alpha * x[i];
}
void v_axpy(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}
void v_fma_acc(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
}
double v_dot(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}
double v_sum(const double* x, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}
double v_sum_sq(const double* x, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t v = vld1q_f64(x + i);
        acc = vfmaq_f64(acc, v, v);
    }
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

}  // namespace

const Kernels* neon_kernels_impl() {
    static const Kernels k = {v_add, v_sub, v_mul, v_div, v_scale,
                              v_axpy, v_fma_acc, v_dot, v_sum, v_sum_sq,
                              "neon"};
    return &k;
}

}  // namespace phasekit::kern

#else

namespace phasekit::kern {
const Kernels* neon_kernels_impl() { return nullptr; }
}  // namespace phasekit::kern

#endif
