#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace phasekit {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    using Error::Error;
};

struct ParseError : Error {
    int line;
    int column;
    ParseError(int line_, int col_, const std::string& msg)
        : Error("parse error at " + std::to_string(line_) + ":" + std::to_string(col_) + ": " + msg),
          line(line_),
          column(col_) {}
};

// Seeded RNG used everywhere randomness is needed. Training code derives a
// fresh Rng per step from (seed, step) so runs are resumable and bit-stable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    std::uint64_t integer(std::uint64_t bound) {
        return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(engine_);
    }
    std::mt19937_64& engine() { return engine_; }

    // Stable per-step derivation (splitmix64 mix of seed and step).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t step) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (step + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace phasekit
