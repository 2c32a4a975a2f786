#include "phasekit/kinematics.hpp"

#include <cmath>

namespace phasekit::kin {

JointPositions forward_kinematics(const Skeleton& skeleton, const std::vector<geo::Rot6d>& rotations,
                                  const std::vector<geo::Vec3>& root_positions) {
    skeleton.validate();
    const int j = skeleton.joint_count();
    const int t = static_cast<int>(root_positions.size());
    if (static_cast<int>(rotations.size()) != t * j)
        throw Error("forward_kinematics: rotations not bound to skeleton/frames");

    JointPositions out;
    out.frames = t;
    out.joints = j;
    out.data.assign(static_cast<std::size_t>(t) * j * 3, 0.0);

    std::vector<geo::Mat3> global(static_cast<std::size_t>(j));
    for (int f = 0; f < t; ++f) {
        for (int ji = 0; ji < j; ++ji) {
            const geo::Mat3 local =
                geo::rot6d_to_matrix(rotations[static_cast<std::size_t>(f * j + ji)],
                                     "frame " + std::to_string(f) + ", joint " +
                                         skeleton.joints[static_cast<std::size_t>(ji)].name);
            const int p = skeleton.joints[static_cast<std::size_t>(ji)].parent;
            geo::Vec3 pos;
            if (p < 0) {
                global[static_cast<std::size_t>(ji)] = local;
                pos = root_positions[static_cast<std::size_t>(f)];
            } else {
                const geo::Vec3 off = skeleton.joints[static_cast<std::size_t>(ji)].offset;
                pos = geo::add(out.pos(f, p), geo::apply(global[static_cast<std::size_t>(p)], off));
                global[static_cast<std::size_t>(ji)] = geo::matmul(global[static_cast<std::size_t>(p)], local);
            }
            out.at(f, ji, 0) = pos[0];
            out.at(f, ji, 1) = pos[1];
            out.at(f, ji, 2) = pos[2];
        }
    }
    return out;
}

std::vector<ag::Tensor> forward_kinematics_ag(const Skeleton& skeleton,
                                              const std::vector<ag::Tensor>& local_rots,
                                              const ag::Tensor& root_positions) {
    const int j = skeleton.joint_count();
    if (static_cast<int>(local_rots.size()) != j)
        throw Error("forward_kinematics_ag: expected one rotation tensor per joint");
    std::vector<ag::Tensor> global_rot(static_cast<std::size_t>(j));
    std::vector<ag::Tensor> pos(static_cast<std::size_t>(j));
    for (int ji = 0; ji < j; ++ji) {
        const int p = skeleton.joints[static_cast<std::size_t>(ji)].parent;
        if (p < 0) {
            global_rot[static_cast<std::size_t>(ji)] = local_rots[static_cast<std::size_t>(ji)];
            pos[static_cast<std::size_t>(ji)] = root_positions;
        } else {
            const geo::Vec3 off = skeleton.joints[static_cast<std::size_t>(ji)].offset;
            ag::Tensor off_t = ag::Tensor::from({off[0], off[1], off[2]}, {1, 3});
            pos[static_cast<std::size_t>(ji)] =
                ag::add(pos[static_cast<std::size_t>(p)],
                        ag::rotate3(global_rot[static_cast<std::size_t>(p)], off_t));
            global_rot[static_cast<std::size_t>(ji)] =
                ag::bmm3(global_rot[static_cast<std::size_t>(p)], local_rots[static_cast<std::size_t>(ji)]);
        }
    }
    return pos;
}

ContactMask detect_contacts(const JointPositions& positions, const std::vector<int>& foot_joints,
                            double height_threshold_cm, double velocity_threshold_cm_s,
                            double frame_rate) {
    if (height_threshold_cm <= 0.0 || velocity_threshold_cm_s <= 0.0)
        throw Error("detect_contacts: thresholds must be positive");
    for (int fj : foot_joints)
        if (fj < 0 || fj >= positions.joints) throw Error("detect_contacts: foot joint index out of range");
    ContactMask cm;
    cm.frames = positions.frames;
    cm.feet = static_cast<int>(foot_joints.size());
    cm.height_threshold_cm = height_threshold_cm;
    cm.velocity_threshold_cm_s = velocity_threshold_cm_s;
    cm.mask.assign(static_cast<std::size_t>(cm.frames) * cm.feet, 0);
    const int t_max = positions.frames;
    for (int fi = 0; fi < cm.feet; ++fi) {
        const int j = foot_joints[static_cast<std::size_t>(fi)];
        for (int t = 0; t < t_max; ++t) {
            const int t0 = t > 0 ? t - 1 : t;
            const int t1 = t < t_max - 1 ? t + 1 : t;
            const geo::Vec3 d = geo::sub(positions.pos(t1, j), positions.pos(t0, j));
            const double speed = geo::norm(d) * frame_rate / static_cast<double>(t1 - t0);
            const double height = positions.at(t, j, 1);
            if (height < height_threshold_cm && speed < velocity_threshold_cm_s)
                cm.mask[static_cast<std::size_t>(t * cm.feet + fi)] = 1;
        }
    }
    return cm;
}

SlidingResult foot_sliding_penalty(const JointPositions& positions, const std::vector<int>& foot_joints,
                                   const ContactMask& mask, double frame_rate) {
    if (mask.frames != positions.frames || mask.feet != static_cast<int>(foot_joints.size()))
        throw Error("foot_sliding_penalty: mask does not match positions/feet");
    double acc = 0.0;
    long count = 0;
    const int t_max = positions.frames;
    for (int fi = 0; fi < mask.feet; ++fi) {
        const int j = foot_joints[static_cast<std::size_t>(fi)];
        for (int t = 0; t < t_max; ++t) {
            if (!mask.at(t, fi)) continue;
            const int t0 = t > 0 ? t - 1 : t;
            const int t1 = t < t_max - 1 ? t + 1 : t;
            const double dx = positions.at(t1, j, 0) - positions.at(t0, j, 0);
            const double dz = positions.at(t1, j, 2) - positions.at(t0, j, 2);
            acc += std::sqrt(dx * dx + dz * dz) * frame_rate / static_cast<double>(t1 - t0);
            ++count;
        }
    }
    SlidingResult r;
    if (count == 0) {
        r.no_contact = true;
        r.value = 0.0;
    } else {
        r.value = acc / static_cast<double>(count);
    }
    return r;
}

double foot_penetration_penalty(const JointPositions& positions, const std::vector<int>& foot_joints) {
    if (foot_joints.empty()) throw Error("foot_penetration_penalty: no foot joints");
    double acc = 0.0;
    for (int fj : foot_joints) {
        if (fj < 0 || fj >= positions.joints)
            throw Error("foot_penetration_penalty: foot joint index out of range");
        for (int t = 0; t < positions.frames; ++t) acc += std::max(0.0, -positions.at(t, fj, 1));
    }
    return acc / (static_cast<double>(positions.frames) * static_cast<double>(foot_joints.size()));
}

}  // namespace phasekit::kin
