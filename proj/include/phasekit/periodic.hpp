#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phasekit/tensor.hpp"

namespace phasekit::per {

// Per-channel sinusoid parameters: l_c(t) = a_c*sin(2*pi*(f_c*t*T_sec - s_c)) + b_c.
struct PeriodicParams {
    std::vector<double> s;  // phase shift, cycles, in [0,1)
    std::vector<double> a;  // amplitude, >= 0
    std::vector<double> f;  // frequency, Hz, in [0, f_max]
    std::vector<double> b;  // offset
    double t_sec = 1.0;     // window duration the normalized time maps onto
    double f_max = 0.0;     // frequency bound the f values respect

    int channels() const { return static_cast<int>(s.size()); }
    void validate() const;
};

// ---- differentiable pieces ---------------------------------------------------

// DFT-derived summary of a (C, N) latent curve; N must be even and >= 4.
struct DftResult {
    ag::Tensor a;      // (C, 1) amplitude, a pure on-bin tone of amplitude A gives A
    ag::Tensor f;      // (C, 1) power-weighted mean frequency, Hz
    ag::Tensor b;      // (C, 1) DC offset X_0 / N
    ag::Tensor power;  // (C, N/2) squared magnitudes for bins 1..N/2
};
DftResult dft_decompose(const ag::Tensor& curve, double t_sec);

// Shared linear map (N -> 2) applied per channel; s = atan2(v, u)/(2*pi) mod 1.
// w: (N, 2), bias: (1, 2). Returns (C, 1). Near-zero (u, v) gives s = 0 with
// zero gradient.
ag::Tensor phase_regress(const ag::Tensor& curve, const ag::Tensor& w, const ag::Tensor& bias);

// Evaluates the sinusoid at arbitrary normalized times. s, a, f, b: (C, 1);
// returns (C, times.size()).
ag::Tensor eval_latent(const ag::Tensor& s, const ag::Tensor& a, const ag::Tensor& f,
                       const ag::Tensor& b, const std::vector<double>& times, double t_sec);

// (C, 2) rows (a_c*sin(2*pi*s_c), a_c*cos(2*pi*s_c)); each row has norm a_c.
ag::Tensor phase_manifold(const ag::Tensor& s, const ag::Tensor& a);

// ---- plain-number counterparts -------------------------------------------------
std::vector<double> eval_latent(const PeriodicParams& params, const std::vector<double>& times);
// Interleaved 2C-vector (a_1 sin, a_1 cos, a_2 sin, ...).
std::vector<double> phase_manifold(const PeriodicParams& params);

// ---- serialization -------------------------------------------------------------
// CSV: header rows "C,T_sec,f_max" / values, then "s,a,f,b" and one row per channel.
std::string params_to_csv(const PeriodicParams& params);
PeriodicParams params_from_csv(const std::string& text);
// Binary: "PKPR" magic, u32 version, u32 C, f64 t_sec, f64 f_max, then C
// (s, a, f, b) doubles, all little-endian.
std::vector<std::uint8_t> params_to_binary(const PeriodicParams& params);
PeriodicParams params_from_binary(const std::vector<std::uint8_t>& bytes);

}  // namespace phasekit::per
