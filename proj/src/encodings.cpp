#include "phasekit/encodings.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace phasekit::enc {

namespace {

constexpr double kTau = 2.0 * 3.14159265358979323846;

void check_connected(const Skeleton& skeleton) {
    const int j = skeleton.joint_count();
    if (j == 0) throw Error("graph pe: empty skeleton");
    const auto adj = skeleton.adjacency();
    std::vector<char> seen(static_cast<std::size_t>(j), 0);
    std::vector<int> stack = {0};
    seen[0] = 1;
    while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int v = 0; v < j; ++v) {
            if (adj[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] && !seen[static_cast<std::size_t>(v)]) {
                seen[static_cast<std::size_t>(v)] = 1;
                stack.push_back(v);
            }
        }
    }
    for (char s : seen)
        if (!s) throw Error("graph pe: skeleton graph is disconnected");
}

Eigen::MatrixXd laplacian_matrix(const Skeleton& skeleton) {
    check_connected(skeleton);
    const int j = skeleton.joint_count();
    const auto adj = skeleton.adjacency();
    Eigen::VectorXd deg(j);
    for (int i = 0; i < j; ++i) {
        int d = 0;
        for (int k = 0; k < j; ++k) d += adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        if (d == 0 && j > 1) throw Error("graph pe: isolated joint");
        deg[i] = static_cast<double>(d);
    }
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(j, j);
    for (int i = 0; i < j; ++i) {
        if (deg[i] > 0) l(i, i) = 1.0;
        for (int k = 0; k < j; ++k) {
            if (adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)])
                l(i, k) = -1.0 / std::sqrt(deg[i] * deg[k]);
        }
    }
    return l;
}

// Largest-magnitude entry positive; first such index wins on magnitude ties.
// The tie margin absorbs solver round-off so symmetric graphs stay stable.
void fix_sign(Eigen::VectorXd& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[best]) + 1e-12) best = i;
    if (v[best] < 0.0) v = -v;
}

}  // namespace

TemporalPE TemporalPE::geometric(int k, double f_min, double f_max) {
    if (k < 1) throw Error("temporal pe: need at least one frequency");
    if (f_min <= 0.0 || (k > 1 && f_max <= f_min))
        throw Error("temporal pe: frequency range must be positive and increasing");
    TemporalPE pe;
    pe.frequencies.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const double u = k == 1 ? 0.0 : static_cast<double>(i) / (k - 1);
        pe.frequencies[static_cast<std::size_t>(i)] = f_min * std::pow(f_max / f_min, u);
    }
    return pe;
}

std::vector<double> temporal_encode(double t, const TemporalPE& pe) {
    if (pe.frequencies.empty()) throw Error("temporal pe: no frequencies");
    std::vector<double> out(static_cast<std::size_t>(pe.out_dim()));
    for (std::size_t i = 0; i < pe.frequencies.size(); ++i) {
        const double w = kTau * pe.frequencies[i] * t;
        out[2 * i] = std::sin(w);
        out[2 * i + 1] = std::cos(w);
    }
    return out;
}

std::vector<double> normalized_laplacian(const Skeleton& skeleton) {
    const Eigen::MatrixXd l = laplacian_matrix(skeleton);
    std::vector<double> out(static_cast<std::size_t>(l.rows() * l.cols()));
    for (int i = 0; i < l.rows(); ++i)
        for (int k = 0; k < l.cols(); ++k) out[static_cast<std::size_t>(i * l.cols() + k)] = l(i, k);
    return out;
}

std::vector<std::vector<double>> laplacian_pe(const Skeleton& skeleton, int n) {
    const int j = skeleton.joint_count();
    if (n < 1) throw Error("laplacian pe: dim must be >= 1");
    if (n > j - 1)
        throw Error("laplacian pe: dim " + std::to_string(n) + " exceeds " + std::to_string(j - 1) +
                    " available nonzero modes");
    const Eigen::MatrixXd l = laplacian_matrix(skeleton);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
    if (es.info() != Eigen::Success) throw Error("laplacian pe: eigendecomposition failed");

    // Ascending eigenvalues; index 0 is the constant mode (lambda = 0).
    std::vector<std::pair<double, Eigen::VectorXd>> modes;
    for (int i = 1; i < j; ++i) {
        Eigen::VectorXd v = es.eigenvectors().col(i);
        fix_sign(v);
        modes.emplace_back(es.eigenvalues()[i], std::move(v));
    }
    std::sort(modes.begin(), modes.end(), [](const auto& a, const auto& b) {
        if (std::abs(a.first - b.first) > 1e-9) return a.first < b.first;
        for (int i = 0; i < a.second.size(); ++i) {
            if (std::abs(a.second[i] - b.second[i]) > 1e-12) return a.second[i] < b.second[i];
        }
        return false;
    });

    std::vector<std::vector<double>> out(static_cast<std::size_t>(j),
                                         std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int c = 0; c < n; ++c)
        for (int r = 0; r < j; ++r)
            out[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = modes[static_cast<std::size_t>(c)].second[r];
    return out;
}

std::vector<std::vector<double>> heat_pe(const Skeleton& skeleton, const std::vector<double>& times,
                                         int probes, std::uint64_t seed) {
    if (times.empty()) throw Error("heat pe: need at least one diffusion time");
    for (double t : times)
        if (t <= 0.0) throw Error("heat pe: diffusion times must be positive");
    if (probes < 1) throw Error("heat pe: need at least one probe");

    const int j = skeleton.joint_count();
    const Eigen::MatrixXd l = laplacian_matrix(skeleton);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
    if (es.info() != Eigen::Success) throw Error("heat pe: eigendecomposition failed");

    Rng rng(seed);
    Eigen::MatrixXd r(j, probes);
    for (int q = 0; q < probes; ++q)
        for (int i = 0; i < j; ++i) r(i, q) = rng.normal();

    const int n = static_cast<int>(times.size()) * probes;
    std::vector<std::vector<double>> out(static_cast<std::size_t>(j),
                                         std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
        Eigen::VectorXd decay = (-times[ti] * es.eigenvalues().array()).exp();
        Eigen::MatrixXd op = es.eigenvectors() * decay.asDiagonal() * es.eigenvectors().transpose();
        Eigen::MatrixXd cols = op * r;
        for (int q = 0; q < probes; ++q)
            for (int i = 0; i < j; ++i)
                out[static_cast<std::size_t>(i)][ti * static_cast<std::size_t>(probes) + static_cast<std::size_t>(q)] =
                    cols(i, q);
    }
    return out;
}

std::vector<std::vector<double>> graph_pe(const Skeleton& skeleton, const GraphPE& cfg) {
    if (cfg.mode == GraphPEMode::Laplacian) return laplacian_pe(skeleton, cfg.dim);
    const int t = static_cast<int>(cfg.heat_times.size());
    if (t == 0 || cfg.dim % t != 0)
        throw Error("graph pe: heat dim must be a multiple of the diffusion time count");
    return heat_pe(skeleton, cfg.heat_times, cfg.dim / t, cfg.seed);
}

}  // namespace phasekit::enc
