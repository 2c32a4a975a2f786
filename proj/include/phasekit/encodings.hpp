#pragma once

#include <cstdint>
#include <vector>

#include "phasekit/skeleton.hpp"

namespace phasekit::enc {

// Fourier features over normalized time t in [0,1]; 2K outputs.
struct TemporalPE {
    std::vector<double> frequencies;  // strictly increasing, cycles per window

    // K frequencies geometrically spaced over [f_min, f_max].
    static TemporalPE geometric(int k = 8, double f_min = 0.5, double f_max = 64.0);
    int out_dim() const { return 2 * static_cast<int>(frequencies.size()); }
};

// [sin(2*pi*f_1*t), cos(2*pi*f_1*t), ..., sin(2*pi*f_K*t), cos(2*pi*f_K*t)]
std::vector<double> temporal_encode(double t, const TemporalPE& pe);

enum class GraphPEMode { Laplacian, Heat };

struct GraphPE {
    GraphPEMode mode = GraphPEMode::Laplacian;
    int dim = 4;
    std::vector<double> heat_times = {0.1, 0.5, 2.0};  // heat mode only
    std::uint64_t seed = 0;                            // heat mode probe seed
};

// Normalized graph Laplacian D^{-1/2} (D - A) D^{-1/2}, row-major J x J.
std::vector<double> normalized_laplacian(const Skeleton& skeleton);

// J x N: eigenvectors of the normalized Laplacian for the N smallest nonzero
// eigenvalues. Each eigenvector's largest-magnitude entry is made positive;
// ties in eigenvalue break by lexicographic eigenvector comparison.
std::vector<std::vector<double>> laplacian_pe(const Skeleton& skeleton, int n);

// J x (times * probes): columns e^{-t_i L} r^(q) for unit-Gaussian probes
// r^(q) drawn from the seed. Column order is time-major: (i, q) -> i*Q + q.
std::vector<std::vector<double>> heat_pe(const Skeleton& skeleton, const std::vector<double>& times,
                                         int probes, std::uint64_t seed);

// Dispatch on mode; heat mode requires dim divisible by the time count.
std::vector<std::vector<double>> graph_pe(const Skeleton& skeleton, const GraphPE& cfg);

}  // namespace phasekit::enc
