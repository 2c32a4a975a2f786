#include <cmath>

#include "phasekit/skeleton.hpp"

namespace phasekit {

namespace {

constexpr double kTau = 2.0 * 3.14159265358979323846;

Skeleton make_chain(const SynthSpec& spec) {
    if (spec.chain_joints < 2) throw Error("synth: chain needs at least 2 joints");
    Skeleton s;
    Joint root;
    root.name = "Root";
    root.parent = -1;
    root.has_position_channels = true;
    s.joints.push_back(root);
    for (int i = 1; i < spec.chain_joints; ++i) {
        Joint j;
        j.name = i == spec.chain_joints - 1 ? "Foot" : "Link" + std::to_string(i);
        j.parent = i - 1;
        j.offset = {0.0, -spec.link_length_cm, 0.0};
        s.joints.push_back(j);
    }
    return s;
}

Skeleton make_biped(const SynthSpec&) {
    Skeleton s;
    auto add = [&s](const std::string& name, int parent, geo::Vec3 off) {
        Joint j;
        j.name = name;
        j.parent = parent;
        j.offset = off;
        s.joints.push_back(j);
        return static_cast<int>(s.joints.size()) - 1;
    };
    const int hips = add("Hips", -1, {0, 0, 0});
    s.joints[0].has_position_channels = true;
    const int spine = add("Spine", hips, {0, 15, 0});
    add("Head", spine, {0, 15, 0});
    const int lup = add("LeftUpLeg", hips, {8, -5, 0});
    const int lknee = add("LeftLeg", lup, {0, -40, 0});
    add("LeftFoot", lknee, {0, -40, 0});
    const int rup = add("RightUpLeg", hips, {-8, -5, 0});
    const int rknee = add("RightLeg", rup, {0, -40, 0});
    add("RightFoot", rknee, {0, -40, 0});
    return s;
}

// Maximum vertical drop from root to any joint in the rest pose.
double rest_depth(const Skeleton& s) {
    std::vector<double> y(s.joints.size(), 0.0);
    double depth = 0.0;
    for (std::size_t i = 1; i < s.joints.size(); ++i) {
        y[i] = y[static_cast<std::size_t>(s.joints[i].parent)] + s.joints[i].offset[1];
        depth = std::min(depth, y[i]);
    }
    return -depth;
}

}  // namespace

double synth_base_frequency(int class_id) {
    if (class_id == 0) return 1.0;
    if (class_id == 1) return 2.0;
    throw Error("synth: class_id must be 0 or 1, got " + std::to_string(class_id));
}

double synth_root_velocity(int class_id) {
    synth_base_frequency(class_id);  // validates class_id
    return class_id == 0 ? 20.0 : 40.0;
}

std::vector<std::string> synth_foot_joints(const SynthSpec& spec) {
    if (spec.skeleton == SkeletonTemplate::Chain) return {"Foot"};
    return {"LeftFoot", "RightFoot"};
}

std::pair<Skeleton, MotionClip> synth_motion(int class_id, const SynthSpec& spec, int frames,
                                             double frame_rate, std::uint64_t seed) {
    const double freq = synth_base_frequency(class_id);
    const double vel = synth_root_velocity(class_id);
    if (frames < 2) throw Error("synth: need at least 2 frames");
    if (frame_rate <= 0.0) throw Error("synth: frame rate must be positive");

    Skeleton skel = spec.skeleton == SkeletonTemplate::Chain ? make_chain(spec) : make_biped(spec);
    const int j = skel.joint_count();
    const double base_height = rest_depth(skel) + spec.ground_clearance_cm;

    // Joints move in a coordinated cycle: base amplitude, phase lag, and swing
    // axis are fixed per joint across the whole corpus, while each clip draws
    // a global phase offset and an amplitude scale. A clip is thus a point on
    // the gait cycle plus a stride magnitude, which is what distinguishes one
    // take of the same gait from another.
    Rng rng(seed);
    const double scale = rng.uniform(0.6, 1.0);
    const double offset = rng.uniform(0.0, kTau);
    Rng gait_rng(0x51A7E5u);
    std::vector<double> amp(static_cast<std::size_t>(j), 0.0);
    std::vector<double> phase(static_cast<std::size_t>(j), 0.0);
    std::vector<geo::Vec3> axis(static_cast<std::size_t>(j), geo::Vec3{0, 0, 1});
    for (int ji = 1; ji < j; ++ji) {
        amp[static_cast<std::size_t>(ji)] =
            scale * gait_rng.uniform(spec.min_swing_rad, spec.max_swing_rad);
        phase[static_cast<std::size_t>(ji)] = offset + gait_rng.uniform(0.0, kTau);
        geo::Vec3 a = {gait_rng.normal(), gait_rng.normal(), gait_rng.normal()};
        if (geo::norm(a) < 1e-6) a = {0, 0, 1};
        axis[static_cast<std::size_t>(ji)] = geo::normalize(a);
    }

    auto skel_ptr = std::make_shared<Skeleton>(skel);
    MotionClip clip;
    clip.skeleton = skel_ptr;
    clip.frame_rate = frame_rate;
    clip.rotations.assign(static_cast<std::size_t>(frames) * j, geo::Rot6d{1, 0, 0, 0, 1, 0});
    clip.root_positions.resize(static_cast<std::size_t>(frames));
    clip.times.resize(static_cast<std::size_t>(frames));

    for (int f = 0; f < frames; ++f) {
        const double t_sec = static_cast<double>(f) / frame_rate;
        clip.times[static_cast<std::size_t>(f)] = static_cast<double>(f) / (frames - 1);
        // Bob only lifts above the base height so ground-truth feet never penetrate.
        const double bob = spec.bob_amplitude_cm * (1.0 - std::cos(kTau * 2.0 * freq * t_sec));
        clip.root_positions[static_cast<std::size_t>(f)] = {vel * t_sec, base_height + bob, 0.0};
        for (int ji = 1; ji < j; ++ji) {
            const double angle = amp[static_cast<std::size_t>(ji)] *
                                 std::sin(kTau * freq * t_sec + phase[static_cast<std::size_t>(ji)]);
            clip.rot(f, ji) = geo::matrix_to_rot6d(
                geo::axis_angle_to_matrix(axis[static_cast<std::size_t>(ji)], angle));
        }
    }
    return {*skel_ptr, clip};
}

}  // namespace phasekit
