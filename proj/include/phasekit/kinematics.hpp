#pragma once

#include <vector>

#include "phasekit/skeleton.hpp"
#include "phasekit/tensor.hpp"

namespace phasekit::kin {

// T x J x 3 world positions, row-major (t, j, axis), cm.
struct JointPositions {
    int frames = 0;
    int joints = 0;
    std::vector<double> data;

    double& at(int t, int j, int a) { return data[static_cast<std::size_t>((t * joints + j) * 3 + a)]; }
    double at(int t, int j, int a) const { return data[static_cast<std::size_t>((t * joints + j) * 3 + a)]; }
    geo::Vec3 pos(int t, int j) const { return {at(t, j, 0), at(t, j, 1), at(t, j, 2)}; }
};

JointPositions forward_kinematics(const Skeleton& skeleton, const std::vector<geo::Rot6d>& rotations,
                                  const std::vector<geo::Vec3>& root_positions);
inline JointPositions forward_kinematics(const MotionClip& clip) {
    return forward_kinematics(*clip.skeleton, clip.rotations, clip.root_positions);
}

// Differentiable FK. `local_rots` holds per-joint (T,9) row-major rotation
// matrices; `root_positions` is (T,3). Returns per-joint (T,3) positions.
std::vector<ag::Tensor> forward_kinematics_ag(const Skeleton& skeleton,
                                              const std::vector<ag::Tensor>& local_rots,
                                              const ag::Tensor& root_positions);

struct ContactMask {
    int frames = 0;
    int feet = 0;
    std::vector<char> mask;  // T x F
    double height_threshold_cm = 2.0;
    double velocity_threshold_cm_s = 2.0;

    bool at(int t, int f) const { return mask[static_cast<std::size_t>(t * feet + f)] != 0; }
};

// Contact at frame t iff foot height < h_c and foot speed < v_c. Speed uses
// central differences (one-sided at the ends).
ContactMask detect_contacts(const JointPositions& positions, const std::vector<int>& foot_joints,
                            double height_threshold_cm, double velocity_threshold_cm_s,
                            double frame_rate);

struct SlidingResult {
    double value = 0.0;   // mean horizontal speed of grounded feet, cm/s
    bool no_contact = false;
};

SlidingResult foot_sliding_penalty(const JointPositions& positions, const std::vector<int>& foot_joints,
                                   const ContactMask& mask, double frame_rate);

// Mean over frames and feet of max(0, -height). Ground plane is y = 0.
double foot_penetration_penalty(const JointPositions& positions, const std::vector<int>& foot_joints);

}  // namespace phasekit::kin
