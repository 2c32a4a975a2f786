#include <doctest.h>

#include <cmath>
#include <vector>

#include "phasekit/common.hpp"
#include "phasekit/kernels.hpp"

using namespace phasekit;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, 2.0);
    return v;
}

}  // namespace

TEST_SUITE("kernels") {

// The scalar table is the reference; whatever `active()` picked (AVX2, NEON,
// or scalar again) must agree elementwise. Lengths cover SIMD remainders.
TEST_CASE("active kernels match the scalar reference") {
    const kern::Kernels& ref = kern::scalar_kernels();
    const kern::Kernels& act = kern::active();
    Rng rng(42);
    for (std::size_t n : {std::size_t{0}, std::size_t{1}, std::size_t{2}, std::size_t{3},
                          std::size_t{4}, std::size_t{5}, std::size_t{7}, std::size_t{8},
                          std::size_t{9}, std::size_t{15}, std::size_t{16}, std::size_t{17},
                          std::size_t{63}, std::size_t{64}, std::size_t{65}, std::size_t{1000},
                          std::size_t{1023}}) {
        CAPTURE(n);
        const std::vector<double> a = random_vec(n, rng);
        const std::vector<double> b = random_vec(n, rng);
        std::vector<double> r(n, 0.0), s(n, 0.0);

        ref.add(a.data(), b.data(), r.data(), n);
        act.add(a.data(), b.data(), s.data(), n);
        CHECK(r == s);
        ref.sub(a.data(), b.data(), r.data(), n);
        act.sub(a.data(), b.data(), s.data(), n);
        CHECK(r == s);
        ref.mul(a.data(), b.data(), r.data(), n);
        act.mul(a.data(), b.data(), s.data(), n);
        CHECK(r == s);
        ref.div(a.data(), b.data(), r.data(), n);
        act.div(a.data(), b.data(), s.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(r[i] == doctest::Approx(s[i]).epsilon(1e-15));
        ref.scale(1.7, a.data(), r.data(), n);
        act.scale(1.7, a.data(), s.data(), n);
        CHECK(r == s);

        // Fused multiply-add variants round once where the scalar path rounds
        // twice, so these may differ in the last ulp.
        std::vector<double> y1 = b, y2 = b;
        ref.axpy(-0.3, a.data(), y1.data(), n);
        act.axpy(-0.3, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-15));
        y1 = b;
        y2 = b;
        ref.fma_acc(a.data(), b.data(), y1.data(), n);
        act.fma_acc(a.data(), b.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-15));

        // Reductions may reassociate; allow an n-scaled tolerance.
        const double tol = 1e-12 * (static_cast<double>(n) + 1.0);
        CHECK(std::abs(ref.dot(a.data(), b.data(), n) - act.dot(a.data(), b.data(), n)) <=
              tol * (1.0 + std::abs(ref.dot(a.data(), b.data(), n))));
        CHECK(std::abs(ref.sum(a.data(), n) - act.sum(a.data(), n)) <=
              tol * (1.0 + std::abs(ref.sum(a.data(), n))));
        CHECK(std::abs(ref.sum_sq(a.data(), n) - act.sum_sq(a.data(), n)) <=
              tol * (1.0 + ref.sum_sq(a.data(), n)));
    }
}

TEST_CASE("unaligned slices agree across variants") {
    const kern::Kernels& ref = kern::scalar_kernels();
    const kern::Kernels& act = kern::active();
    Rng rng(7);
    const std::vector<double> a = random_vec(130, rng);
    const std::vector<double> b = random_vec(130, rng);
    for (std::size_t off = 0; off < 8; ++off) {
        const std::size_t n = 100;
        std::vector<double> r(n), s(n);
        ref.mul(a.data() + off, b.data() + off, r.data(), n);
        act.mul(a.data() + off, b.data() + off, s.data(), n);
        CHECK(r == s);
    }
}

TEST_CASE("force_scalar switches the active table") {
    kern::force_scalar(true);
    CHECK(std::string(kern::active().name) == std::string(kern::scalar_kernels().name));
    kern::force_scalar(false);
    if (kern::avx2_available() || kern::neon_available())
        CHECK(std::string(kern::active().name) != "scalar");
}

TEST_CASE("gemm matches a naive triple loop in all transpose modes") {
    Rng rng(11);
    const std::size_t m = 7, n = 5, k = 9;
    const std::vector<double> a = random_vec(m * k, rng);
    const std::vector<double> b = random_vec(k * n, rng);
    auto naive = [&](bool ta, bool tb) {
        std::vector<double> c(m * n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = ta ? a[p * m + i] : a[i * k + p];
                    const double bv = tb ? b[j * k + p] : b[p * n + j];
                    acc += av * bv;
                }
                c[i * n + j] = acc;
            }
        return c;
    };
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            CAPTURE(ta);
            CAPTURE(tb);
            std::vector<double> c(m * n, 0.5);
            kern::gemm(ta, tb, m, n, k, a.data(), b.data(), c.data(), false);
            const std::vector<double> want = naive(ta, tb);
            for (std::size_t i = 0; i < c.size(); ++i)
                CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));
            // Accumulate mode adds on top of the existing contents.
            std::vector<double> c2 = want;
            kern::gemm(ta, tb, m, n, k, a.data(), b.data(), c2.data(), true);
            for (std::size_t i = 0; i < c2.size(); ++i)
                CHECK(c2[i] == doctest::Approx(2.0 * want[i]).epsilon(1e-12));
        }
}

}  // TEST_SUITE
