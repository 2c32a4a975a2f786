#pragma once

#include <string>
#include <vector>

#include "phasekit/kinematics.hpp"

namespace phasekit::met {

struct MetricEntry {
    std::string name;
    double value = 0.0;
    std::string units;
    bool proxy = false;  // definition is ours, not a standard one
};

struct MetricReport {
    std::vector<MetricEntry> entries;
    int frames = 0;
    std::string config_hash;

    void add(const std::string& name, double value, const std::string& units, bool proxy = false);
    std::string to_csv() const;
    std::string to_json() const;
};

// Mean Euclidean distance over (frame, joint), cm.
double position_error(const kin::JointPositions& gt, const kin::JointPositions& pred);

// Mean geodesic rotation distance, radians.
double orientation_error(const std::vector<geo::Rot6d>& gt, const std::vector<geo::Rot6d>& pred);

// Normalized power spectrum similarity. Each feature is an equal-length
// sequence; per feature the DC-removed power spectra are normalized into CDFs
// and compared by earth-mover's distance, then averaged weighted by ground
// truth total power. Zero-power ground-truth features are skipped.
double npss(const std::vector<std::vector<double>>& gt_features,
            const std::vector<std::vector<double>>& pred_features);

// Mean joint acceleration magnitude via second central differences, cm/s^2.
double acl(const kin::JointPositions& positions, double frame_rate);

// Mean lag-1 autocorrelation of per-joint velocity magnitudes. Degenerate
// (constant-speed) joints count as 1. Flagged as a proxy in reports.
double coherence_proxy(const kin::JointPositions& positions, double frame_rate);

// Mean over dimensions of the population standard deviation across samples.
// Each sample is one flattened pose-vector sequence; all must match in length.
double diversity(const std::vector<std::vector<double>>& samples);

// Gaussian Frechet distance between two feature sets (rows = samples).
// Covariances use the n-1 denominator; the PSD square root floors
// eigenvalues at 1e-10.
double frechet_distance(const std::vector<std::vector<double>>& features_a,
                        const std::vector<std::vector<double>>& features_b);

struct PcaResult {
    std::vector<std::vector<double>> coords;  // n x k
    std::vector<double> explained_variance;   // k ratios of total variance
};

// Centered covariance eigendecomposition, top-k projection. Component sign
// fixed by making the largest-magnitude loading positive; eigenvalue ties
// break lexicographically.
PcaResult pca_project(const std::vector<std::vector<double>>& points, int k);

}  // namespace phasekit::met
