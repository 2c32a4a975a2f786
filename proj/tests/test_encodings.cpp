#include <doctest.h>

#include <cmath>
#include <vector>

#include "../tests/helpers.hpp"
#include "phasekit/encodings.hpp"

using namespace phasekit;

namespace {

Skeleton path_skeleton(int n) {
    Skeleton s;
    for (int i = 0; i < n; ++i)
        s.joints.push_back({"j" + std::to_string(i), i - 1, {0, -1, 0}, "ZYX", i == 0, {}});
    return s;
}

// Star: joint 0 is the hub, the rest hang off it.
Skeleton star_skeleton(int leaves) {
    Skeleton s;
    s.joints.push_back({"hub", -1, {0, 0, 0}, "ZYX", true, {}});
    for (int i = 0; i < leaves; ++i)
        s.joints.push_back({"leaf" + std::to_string(i), 0, {1, 0, 0}, "ZYX", false, {}});
    return s;
}

// Dense matrix-vector product with the row-major J x J Laplacian.
std::vector<double> apply_matrix(const std::vector<double>& m, const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i] += m[i * n + j] * v[j];
    return out;
}

// Taylor-series heat kernel: e^{-tL} r summed to convergence. Independent of
// any eigendecomposition.
std::vector<double> taylor_heat(const std::vector<double>& lap, std::vector<double> r, double t) {
    std::vector<double> acc = r;
    std::vector<double> term = r;
    for (int k = 1; k <= 60; ++k) {
        term = apply_matrix(lap, term);
        const double c = -t / static_cast<double>(k);
        for (auto& x : term) x *= c;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += term[i];
    }
    return acc;
}

}  // namespace

TEST_SUITE("encodings") {

TEST_CASE("temporal encoding values and dimension") {
    const enc::TemporalPE pe = enc::TemporalPE::geometric(4, 0.5, 8.0);
    REQUIRE(pe.frequencies.size() == 4);
    CHECK(pe.frequencies.front() == doctest::Approx(0.5));
    CHECK(pe.frequencies.back() == doctest::Approx(8.0));
    // Geometric spacing: constant ratio.
    const double r0 = pe.frequencies[1] / pe.frequencies[0];
    const double r1 = pe.frequencies[2] / pe.frequencies[1];
    CHECK(r0 == doctest::Approx(r1).epsilon(1e-12));

    const double t = 0.37;
    const auto v = enc::temporal_encode(t, pe);
    REQUIRE(static_cast<int>(v.size()) == pe.out_dim());
    for (std::size_t k = 0; k < pe.frequencies.size(); ++k) {
        CHECK(v[2 * k] == doctest::Approx(std::sin(2.0 * 3.14159265358979323846 * pe.frequencies[k] * t)));
        CHECK(v[2 * k + 1] == doctest::Approx(std::cos(2.0 * 3.14159265358979323846 * pe.frequencies[k] * t)));
    }
}

TEST_CASE("normalized Laplacian of a 3-path has eigenvalues 0, 1, 2") {
    const Skeleton s = path_skeleton(3);
    const std::vector<double> lap = enc::normalized_laplacian(s);
    // Characteristic values via explicit eigenvectors:
    // lambda=0 -> (1, sqrt2, 1)/2 (degree-weighted constant)
    const double inv = 1.0 / std::sqrt(2.0);
    const std::vector<double> v0 = {0.5, inv, 0.5};
    const auto lv0 = apply_matrix(lap, v0);
    for (int i = 0; i < 3; ++i) CHECK(lv0[static_cast<std::size_t>(i)] == doctest::Approx(0.0).epsilon(1e-12));
    // lambda=2 -> (1, -sqrt2, 1)
    const std::vector<double> v2 = {0.5, -inv, 0.5};
    const auto lv2 = apply_matrix(lap, v2);
    for (int i = 0; i < 3; ++i) CHECK(lv2[static_cast<std::size_t>(i)] == doctest::Approx(2.0 * v2[static_cast<std::size_t>(i)]).epsilon(1e-12));
    // lambda=1 -> (1, 0, -1)
    const std::vector<double> v1 = {inv, 0.0, -inv};
    const auto lv1 = apply_matrix(lap, v1);
    for (int i = 0; i < 3; ++i) CHECK(lv1[static_cast<std::size_t>(i)] == doctest::Approx(v1[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("laplacian PE columns are orthonormal eigenvectors with ascending eigenvalues") {
    const Skeleton s = path_skeleton(8);
    const std::vector<double> lap = enc::normalized_laplacian(s);
    const int n = 5;
    const auto pe = enc::laplacian_pe(s, n);
    REQUIRE(static_cast<int>(pe.size()) == 8);
    REQUIRE(static_cast<int>(pe[0].size()) == n);

    double prev = -1.0;
    for (int c = 0; c < n; ++c) {
        std::vector<double> col(8);
        for (int j = 0; j < 8; ++j) col[static_cast<std::size_t>(j)] = pe[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        const auto lv = apply_matrix(lap, col);
        // Rayleigh quotient recovers the eigenvalue; residual must vanish.
        double lambda = 0.0, nrm = 0.0;
        for (int j = 0; j < 8; ++j) {
            lambda += col[static_cast<std::size_t>(j)] * lv[static_cast<std::size_t>(j)];
            nrm += col[static_cast<std::size_t>(j)] * col[static_cast<std::size_t>(j)];
        }
        CHECK(nrm == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(lambda > 1e-9);  // nonzero modes only
        CHECK(lambda >= prev - 1e-9);
        prev = lambda;
        for (int j = 0; j < 8; ++j)
            CHECK(lv[static_cast<std::size_t>(j)] == doctest::Approx(lambda * col[static_cast<std::size_t>(j)]).epsilon(1e-8));
        // Sign rule: the largest-magnitude entry is positive.
        double best = 0.0;
        for (double x : col)
            if (std::abs(x) > std::abs(best) + 1e-12) best = x;
        CHECK(best > 0.0);
        // Orthogonal to earlier columns.
        for (int c2 = 0; c2 < c; ++c2) {
            double dot = 0.0;
            for (int j = 0; j < 8; ++j) dot += col[static_cast<std::size_t>(j)] * pe[static_cast<std::size_t>(j)][static_cast<std::size_t>(c2)];
            CHECK(std::abs(dot) < 1e-9);
        }
    }
}

TEST_CASE("star graph exposes the eigenvalue-1 multiplicity deterministically") {
    const Skeleton s = star_skeleton(3);
    const auto pe1 = enc::laplacian_pe(s, 3);
    const auto pe2 = enc::laplacian_pe(s, 3);
    CHECK(pe1 == pe2);  // tie-break must be stable
    // Eigenvalues of the normalized Laplacian of S4: 0, 1, 1, 2.
    const std::vector<double> lap = enc::normalized_laplacian(s);
    for (int c = 0; c < 3; ++c) {
        std::vector<double> col(4);
        for (int j = 0; j < 4; ++j) col[static_cast<std::size_t>(j)] = pe1[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        const auto lv = apply_matrix(lap, col);
        double lambda = 0.0;
        for (int j = 0; j < 4; ++j) lambda += col[static_cast<std::size_t>(j)] * lv[static_cast<std::size_t>(j)];
        CHECK(lambda == doctest::Approx(c < 2 ? 1.0 : 2.0).epsilon(1e-9));
    }
}

TEST_CASE("laplacian PE rejects out-of-range dimensions") {
    const Skeleton s = path_skeleton(4);
    CHECK_THROWS_AS(enc::laplacian_pe(s, 4), Error);  // only J-1 nonzero modes
    CHECK_NOTHROW(enc::laplacian_pe(s, 3));
}

TEST_CASE("heat PE matches the Taylor-series heat kernel") {
    const Skeleton s = path_skeleton(6);
    const std::vector<double> lap = enc::normalized_laplacian(s);
    const std::vector<double> times = {0.1, 0.7, 2.5};
    const int probes = 2;
    const std::uint64_t seed = 99;
    const auto pe = enc::heat_pe(s, times, probes, seed);
    REQUIRE(static_cast<int>(pe.size()) == 6);
    REQUIRE(pe[0].size() == times.size() * static_cast<std::size_t>(probes));

    // The probes are drawn exactly as the implementation draws them.
    Rng rng(seed);
    std::vector<std::vector<double>> probe_vecs;
    for (int q = 0; q < probes; ++q) {
        std::vector<double> r(6);
        for (auto& x : r) x = rng.normal();
        probe_vecs.push_back(std::move(r));
    }
    for (std::size_t ti = 0; ti < times.size(); ++ti)
        for (int q = 0; q < probes; ++q) {
            const auto want = taylor_heat(lap, probe_vecs[static_cast<std::size_t>(q)], times[ti]);
            const std::size_t col = ti * static_cast<std::size_t>(probes) + static_cast<std::size_t>(q);
            for (int j = 0; j < 6; ++j)
                CHECK(pe[static_cast<std::size_t>(j)][col] == doctest::Approx(want[static_cast<std::size_t>(j)]).epsilon(1e-9));
        }
}

TEST_CASE("heat kernel limits: tiny t approaches identity, large t flattens") {
    const Skeleton s = path_skeleton(5);
    CHECK_THROWS_AS(enc::heat_pe(s, {0.0}, 1, 5), Error);
    const auto pe0 = enc::heat_pe(s, {1e-9}, 1, 5);
    Rng rng(5);
    std::vector<double> r(5);
    for (auto& x : r) x = rng.normal();
    for (int j = 0; j < 5; ++j) CHECK(pe0[static_cast<std::size_t>(j)][0] == doctest::Approx(r[static_cast<std::size_t>(j)]).epsilon(1e-7));

    // As t grows, only the lambda=0 mode survives; entries follow sqrt(deg).
    const auto pel = enc::heat_pe(s, {200.0}, 1, 5);
    const std::vector<double> deg = {1, 2, 2, 2, 1};
    const double ratio0 = pel[0][0] / std::sqrt(deg[0]);
    for (int j = 1; j < 5; ++j)
        CHECK(pel[static_cast<std::size_t>(j)][0] / std::sqrt(deg[static_cast<std::size_t>(j)]) ==
              doctest::Approx(ratio0).epsilon(1e-8));
}

TEST_CASE("graph PE dispatch honors mode and validates heat dims") {
    const Skeleton s = path_skeleton(6);
    enc::GraphPE cfg;
    cfg.mode = enc::GraphPEMode::Laplacian;
    cfg.dim = 3;
    CHECK(enc::graph_pe(s, cfg) == enc::laplacian_pe(s, 3));

    cfg.mode = enc::GraphPEMode::Heat;
    cfg.heat_times = {0.1, 0.5, 2.0};
    cfg.dim = 6;  // 2 probes x 3 times
    const auto heat = enc::graph_pe(s, cfg);
    CHECK(heat[0].size() == 6);
    cfg.dim = 7;  // not a multiple of the time count
    CHECK_THROWS_AS(enc::graph_pe(s, cfg), Error);
}

TEST_CASE("single-joint skeletons have no usable spectral modes") {
    Skeleton s;
    s.joints.push_back({"a", -1, {0, 0, 0}, "ZYX", true, {}});
    CHECK_THROWS_AS(enc::laplacian_pe(s, 1), Error);
}

}  // TEST_SUITE
