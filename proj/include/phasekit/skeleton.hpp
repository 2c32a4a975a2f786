#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "phasekit/common.hpp"
#include "phasekit/geometry.hpp"

namespace phasekit {

struct Joint {
    std::string name;
    int parent = -1;  // -1 for the root
    geo::Vec3 offset = {0, 0, 0};  // rest offset from parent, cm
    std::string rotation_order = "ZYX";
    bool has_position_channels = false;
    std::optional<geo::Vec3> end_site;  // leaf tip offset, if any
};

struct Skeleton {
    std::vector<Joint> joints;  // topologically ordered: parent index < child index

    int joint_count() const { return static_cast<int>(joints.size()); }
    int find_joint(const std::string& name) const;  // -1 when absent
    // Symmetric 0/1 adjacency from parent-child edges, zero diagonal.
    std::vector<std::vector<int>> adjacency() const;
    void validate() const;  // single root, topological order
};

using SkeletonPtr = std::shared_ptr<const Skeleton>;

// Fixed-duration window of motion bound to a skeleton. Rotations are stored
// per (frame, joint) in 6D form; root positions are world-space cm.
struct MotionClip {
    SkeletonPtr skeleton;
    double frame_rate = 60.0;
    std::vector<geo::Rot6d> rotations;  // T*J, row-major (t, j)
    std::vector<geo::Vec3> root_positions;  // T
    std::vector<double> times;  // T, strictly increasing, normalized to [0,1]

    int frames() const { return static_cast<int>(root_positions.size()); }
    int joint_count() const { return skeleton->joint_count(); }
    const geo::Rot6d& rot(int t, int j) const {
        return rotations[static_cast<std::size_t>(t * joint_count() + j)];
    }
    geo::Rot6d& rot(int t, int j) { return rotations[static_cast<std::size_t>(t * joint_count() + j)]; }
    void validate() const;
};

struct ClipWindowSpec {
    int window = 60;
    int stride = 60;
};

// Splits a clip into floor((T-window)/stride)+1 windows, each with times
// re-normalized to [0,1]. Returns an empty list when the clip is too short.
std::vector<MotionClip> window_clips(const MotionClip& clip, const ClipWindowSpec& spec);

// JSON form of the joint table, used inside checkpoint metadata.
std::string skeleton_to_json(const Skeleton& skeleton);
Skeleton skeleton_from_json(const std::string& text);

// Dataset manifest: {path, class_label} pairs serialized as JSON.
struct ManifestEntry {
    std::string path;
    int class_label = 0;
};
std::string manifest_to_json(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> manifest_from_json(const std::string& text);

// ---- BVH -------------------------------------------------------------------
struct BvhOptions {
    double unit_scale = 1.0;  // multiply file units into cm
};

std::pair<Skeleton, MotionClip> parse_bvh(const std::string& text, const BvhOptions& opts = {});
std::string write_bvh(const Skeleton& skeleton, const MotionClip& clip);

// ---- synthetic motion --------------------------------------------------------
enum class SkeletonTemplate { Chain, Biped };

struct SynthSpec {
    SkeletonTemplate skeleton = SkeletonTemplate::Chain;
    int chain_joints = 8;  // including root (chain template)
    double link_length_cm = 10.0;
    double ground_clearance_cm = 1.0;
    double max_swing_rad = 0.35;
    double min_swing_rad = 0.10;
    double bob_amplitude_cm = 0.5;
};

// Deterministic oscillating motion: class 0 is walk-like (1 Hz base
// frequency), class 1 run-like (2 Hz). Non-root joints swing sinusoidally
// about fixed per-joint axes with fixed per-joint phase lags; each clip draws
// a global phase offset and an amplitude scale from the seed. The root
// translates at a constant horizontal velocity with a vertical bob at twice
// the base frequency.
std::pair<Skeleton, MotionClip> synth_motion(int class_id, const SynthSpec& spec, int frames,
                                             double frame_rate, std::uint64_t seed);

// Names of the joints treated as feet for the given template.
std::vector<std::string> synth_foot_joints(const SynthSpec& spec);

double synth_base_frequency(int class_id);    // Hz
double synth_root_velocity(int class_id);     // cm/s

}  // namespace phasekit
