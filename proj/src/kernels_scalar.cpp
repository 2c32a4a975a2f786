#include "phasekit/kernels.hpp"

namespace phasekit::kern {
namespace {

void s_add(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void s_sub(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void s_mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void s_div(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}
void s_scale(double alpha, const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}
void s_axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void s_fma_acc(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}
double s_dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}
double s_sum(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}
double s_sum_sq(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

}  // namespace

const Kernels& scalar_kernels() {
    static const Kernels k = {s_add, s_sub, s_mul, s_div, s_scale,
                              s_axpy, s_fma_acc, s_dot, s_sum, s_sum_sq,
                              "scalar"};
    return k;
}

}  // namespace phasekit::kern
