#include "phasekit/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace phasekit::met {

namespace {

constexpr double kTau = 2.0 * 3.14159265358979323846;

// Power spectrum |X_k|^2 for bins 1..N/2, direct DFT.
std::vector<double> power_spectrum(const std::vector<double>& x) {
    const std::size_t n = x.size();
    const std::size_t half = n / 2;
    std::vector<double> p(half, 0.0);
    for (std::size_t k = 1; k <= half; ++k) {
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = kTau * static_cast<double>(k) * static_cast<double>(i) / static_cast<double>(n);
            re += x[i] * std::cos(w);
            im -= x[i] * std::sin(w);
        }
        p[k - 1] = re * re + im * im;
    }
    return p;
}

// Symmetric PSD square root with an eigenvalue floor.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw Error("frechet: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev[i] = std::sqrt(std::max(ev[i], 1e-10));
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows, const char* what) {
    if (rows.empty()) throw Error(std::string(what) + ": empty sample set");
    const std::size_t d = rows[0].size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != d) throw Error(std::string(what) + ": ragged sample dimensions");
        for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

}  // namespace

void MetricReport::add(const std::string& name, double value, const std::string& units, bool proxy) {
    if (!std::isfinite(value)) throw Error("metric report: non-finite value for " + name);
    entries.push_back({name, value, units, proxy});
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "metric,value,units,proxy\n";
    for (const auto& e : entries) os << e.name << "," << e.value << "," << e.units << "," << (e.proxy ? 1 : 0) << "\n";
    return os.str();
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["frames"] = frames;
    j["config_hash"] = config_hash;
    j["metrics"] = nlohmann::json::array();
    for (const auto& e : entries)
        j["metrics"].push_back({{"name", e.name}, {"value", e.value}, {"units", e.units}, {"proxy", e.proxy}});
    return j.dump(2) + "\n";
}

double position_error(const kin::JointPositions& gt, const kin::JointPositions& pred) {
    if (gt.frames != pred.frames || gt.joints != pred.joints)
        throw ShapeError("position_error: shape mismatch");
    if (gt.frames == 0 || gt.joints == 0) throw Error("position_error: empty input");
    double acc = 0.0;
    for (int t = 0; t < gt.frames; ++t)
        for (int j = 0; j < gt.joints; ++j) acc += geo::norm(geo::sub(gt.pos(t, j), pred.pos(t, j)));
    return acc / (static_cast<double>(gt.frames) * gt.joints);
}

double orientation_error(const std::vector<geo::Rot6d>& gt, const std::vector<geo::Rot6d>& pred) {
    if (gt.size() != pred.size()) throw ShapeError("orientation_error: size mismatch");
    if (gt.empty()) throw Error("orientation_error: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i)
        acc += geo::geodesic_distance(geo::rot6d_to_matrix(gt[i]), geo::rot6d_to_matrix(pred[i]));
    return acc / static_cast<double>(gt.size());
}

double npss(const std::vector<std::vector<double>>& gt_features,
            const std::vector<std::vector<double>>& pred_features) {
    if (gt_features.size() != pred_features.size()) throw ShapeError("npss: feature count mismatch");
    if (gt_features.empty()) throw Error("npss: no features");
    double weighted = 0.0, total_weight = 0.0;
    for (std::size_t f = 0; f < gt_features.size(); ++f) {
        if (gt_features[f].size() != pred_features[f].size()) throw ShapeError("npss: sequence length mismatch");
        if (gt_features[f].size() < 4) throw Error("npss: sequences too short");
        std::vector<double> pg = power_spectrum(gt_features[f]);
        std::vector<double> pp = power_spectrum(pred_features[f]);
        const double wg = std::accumulate(pg.begin(), pg.end(), 0.0);
        const double wp = std::accumulate(pp.begin(), pp.end(), 0.0);
        if (wg <= 0.0) continue;  // zero-power ground truth carries no weight
        double cg = 0.0, cp = 0.0, emd = 0.0;
        for (std::size_t k = 0; k < pg.size(); ++k) {
            cg += pg[k] / wg;
            if (wp > 0.0) cp += pp[k] / wp;
            emd += std::abs(cg - cp);
        }
        emd /= static_cast<double>(pg.size());
        weighted += wg * emd;
        total_weight += wg;
    }
    if (total_weight <= 0.0) throw Error("npss: all ground-truth features have zero power");
    return weighted / total_weight;
}

double acl(const kin::JointPositions& positions, double frame_rate) {
    if (positions.frames < 3) throw Error("acl: need at least 3 frames");
    double acc = 0.0;
    long count = 0;
    for (int t = 1; t + 1 < positions.frames; ++t) {
        for (int j = 0; j < positions.joints; ++j) {
            double a2 = 0.0;
            for (int ax = 0; ax < 3; ++ax) {
                const double a = (positions.at(t + 1, j, ax) - 2.0 * positions.at(t, j, ax) +
                                  positions.at(t - 1, j, ax)) *
                                 frame_rate * frame_rate;
                a2 += a * a;
            }
            acc += std::sqrt(a2);
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

double coherence_proxy(const kin::JointPositions& positions, double frame_rate) {
    if (positions.frames < 3) throw Error("coherence: need at least 3 frames");
    double acc = 0.0;
    for (int j = 0; j < positions.joints; ++j) {
        const int n = positions.frames - 1;
        std::vector<double> speed(static_cast<std::size_t>(n));
        for (int t = 0; t < n; ++t)
            speed[static_cast<std::size_t>(t)] =
                geo::norm(geo::sub(positions.pos(t + 1, j), positions.pos(t, j))) * frame_rate;
        double mean = std::accumulate(speed.begin(), speed.end(), 0.0) / n;
        double var = 0.0, cov = 0.0;
        for (int t = 0; t < n; ++t) var += (speed[static_cast<std::size_t>(t)] - mean) * (speed[static_cast<std::size_t>(t)] - mean);
        for (int t = 0; t + 1 < n; ++t)
            cov += (speed[static_cast<std::size_t>(t)] - mean) * (speed[static_cast<std::size_t>(t + 1)] - mean);
        // Constant speed has no structure to violate; count it as coherent.
        acc += var < 1e-12 ? 1.0 : cov / var;
    }
    return acc / static_cast<double>(positions.joints);
}

double diversity(const std::vector<std::vector<double>>& samples) {
    if (samples.size() < 2) throw Error("diversity: need at least 2 samples");
    const std::size_t d = samples[0].size();
    for (const auto& s : samples)
        if (s.size() != d) throw ShapeError("diversity: ragged sample dimensions");
    if (d == 0) throw Error("diversity: empty samples");
    const double n = static_cast<double>(samples.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (const auto& s : samples) mean += s[k];
        mean /= n;
        double var = 0.0;
        for (const auto& s : samples) var += (s[k] - mean) * (s[k] - mean);
        acc += std::sqrt(var / n);
    }
    return acc / static_cast<double>(d);
}

double frechet_distance(const std::vector<std::vector<double>>& features_a,
                        const std::vector<std::vector<double>>& features_b) {
    Eigen::MatrixXd a = to_matrix(features_a, "frechet");
    Eigen::MatrixXd b = to_matrix(features_b, "frechet");
    if (a.cols() != b.cols()) throw ShapeError("frechet: feature dimension mismatch");
    const Eigen::Index d = a.cols();
    if (a.rows() < d + 1 || b.rows() < d + 1)
        throw Error("frechet: need at least dim+1 samples per side");

    Eigen::VectorXd mu_a = a.colwise().mean();
    Eigen::VectorXd mu_b = b.colwise().mean();
    Eigen::MatrixXd ca = a.rowwise() - mu_a.transpose();
    Eigen::MatrixXd cb = b.rowwise() - mu_b.transpose();
    Eigen::MatrixXd sa = ca.transpose() * ca / static_cast<double>(a.rows() - 1);
    Eigen::MatrixXd sb = cb.transpose() * cb / static_cast<double>(b.rows() - 1);

    const Eigen::MatrixXd ra = psd_sqrt(sa);
    const Eigen::MatrixXd cross = psd_sqrt(ra * sb * ra);
    const double val = (mu_a - mu_b).squaredNorm() + (sa + sb - 2.0 * cross).trace();
    return std::max(val, 0.0);
}

PcaResult pca_project(const std::vector<std::vector<double>>& points, int k) {
    Eigen::MatrixXd x = to_matrix(points, "pca");
    const Eigen::Index d = x.cols();
    if (k < 1 || k > d) throw Error("pca: k out of range");
    if (x.rows() < k + 1) throw Error("pca: need at least k+1 points");

    Eigen::VectorXd mu = x.colwise().mean();
    Eigen::MatrixXd c = x.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = c.transpose() * c / std::max<double>(1.0, static_cast<double>(x.rows() - 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw Error("pca: eigendecomposition failed");

    std::vector<std::pair<double, Eigen::VectorXd>> modes;
    for (Eigen::Index i = 0; i < d; ++i) {
        Eigen::VectorXd v = es.eigenvectors().col(i);
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < d; ++r)
            if (std::abs(v[r]) > std::abs(v[best])) best = r;
        if (v[best] < 0.0) v = -v;
        modes.emplace_back(es.eigenvalues()[i], std::move(v));
    }
    std::sort(modes.begin(), modes.end(), [](const auto& a, const auto& b) {
        if (std::abs(a.first - b.first) > 1e-12) return a.first > b.first;
        for (Eigen::Index i = 0; i < a.second.size(); ++i)
            if (std::abs(a.second[i] - b.second[i]) > 1e-12) return a.second[i] < b.second[i];
        return false;
    });

    const double total = std::max(cov.trace(), 1e-300);
    PcaResult out;
    out.coords.assign(static_cast<std::size_t>(x.rows()), std::vector<double>(static_cast<std::size_t>(k), 0.0));
    out.explained_variance.resize(static_cast<std::size_t>(k));
    for (int ki = 0; ki < k; ++ki) {
        out.explained_variance[static_cast<std::size_t>(ki)] =
            std::max(modes[static_cast<std::size_t>(ki)].first, 0.0) / total;
        Eigen::VectorXd proj = c * modes[static_cast<std::size_t>(ki)].second;
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            out.coords[static_cast<std::size_t>(r)][static_cast<std::size_t>(ki)] = proj[r];
    }
    return out;
}

}  // namespace phasekit::met
