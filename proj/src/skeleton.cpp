#include "phasekit/skeleton.hpp"

#include <nlohmann/json.hpp>

namespace phasekit {

int Skeleton::find_joint(const std::string& name) const {
    for (std::size_t i = 0; i < joints.size(); ++i)
        if (joints[i].name == name) return static_cast<int>(i);
    return -1;
}

std::vector<std::vector<int>> Skeleton::adjacency() const {
    const int j = joint_count();
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(j), std::vector<int>(static_cast<std::size_t>(j), 0));
    for (int i = 0; i < j; ++i) {
        const int p = joints[static_cast<std::size_t>(i)].parent;
        if (p >= 0) {
            adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)] = 1;
            adj[static_cast<std::size_t>(p)][static_cast<std::size_t>(i)] = 1;
        }
    }
    return adj;
}

void Skeleton::validate() const {
    int roots = 0;
    for (std::size_t i = 0; i < joints.size(); ++i) {
        const int p = joints[i].parent;
        if (p < 0) {
            ++roots;
        } else if (p >= static_cast<int>(i)) {
            throw Error("skeleton: joint '" + joints[i].name + "' is not topologically ordered");
        }
    }
    if (roots != 1) throw Error("skeleton: expected exactly one root, found " + std::to_string(roots));
}

void MotionClip::validate() const {
    const int t = frames();
    const int j = joint_count();
    if (static_cast<int>(rotations.size()) != t * j) throw Error("clip: rotation table size mismatch");
    if (static_cast<int>(times.size()) != t) throw Error("clip: times size mismatch");
    for (int i = 1; i < t; ++i)
        if (times[static_cast<std::size_t>(i)] <= times[static_cast<std::size_t>(i - 1)])
            throw Error("clip: times not strictly increasing");
    for (const auto& r : rotations) geo::rot6d_to_matrix(r);  // throws on invalid entries
}

std::vector<MotionClip> window_clips(const MotionClip& clip, const ClipWindowSpec& spec) {
    if (spec.window < 2) throw Error("window_clips: window length must be >= 2");
    if (spec.stride < 1) throw Error("window_clips: stride must be >= 1");
    std::vector<MotionClip> out;
    const int t = clip.frames();
    if (t < spec.window) return out;
    const int j = clip.joint_count();
    for (int start = 0; start + spec.window <= t; start += spec.stride) {
        MotionClip w;
        w.skeleton = clip.skeleton;
        w.frame_rate = clip.frame_rate;
        w.rotations.assign(clip.rotations.begin() + static_cast<std::ptrdiff_t>(start) * j,
                           clip.rotations.begin() + static_cast<std::ptrdiff_t>(start + spec.window) * j);
        w.root_positions.assign(clip.root_positions.begin() + start,
                                clip.root_positions.begin() + start + spec.window);
        w.times.resize(static_cast<std::size_t>(spec.window));
        for (int i = 0; i < spec.window; ++i)
            w.times[static_cast<std::size_t>(i)] = static_cast<double>(i) / (spec.window - 1);
        out.push_back(std::move(w));
    }
    return out;
}

std::string skeleton_to_json(const Skeleton& skeleton) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& j : skeleton.joints) {
        nlohmann::json item = {{"name", j.name},
                               {"parent", j.parent},
                               {"offset", {j.offset[0], j.offset[1], j.offset[2]}},
                               {"rotation_order", j.rotation_order},
                               {"position_channels", j.has_position_channels}};
        if (j.end_site) item["end_site"] = {(*j.end_site)[0], (*j.end_site)[1], (*j.end_site)[2]};
        arr.push_back(item);
    }
    return arr.dump();
}

Skeleton skeleton_from_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("skeleton: invalid JSON: ") + e.what());
    }
    if (!arr.is_array()) throw Error("skeleton: expected a JSON array");
    Skeleton s;
    for (const auto& item : arr) {
        Joint j;
        j.name = item.at("name").get<std::string>();
        j.parent = item.at("parent").get<int>();
        const auto off = item.at("offset");
        j.offset = {off.at(0).get<double>(), off.at(1).get<double>(), off.at(2).get<double>()};
        j.rotation_order = item.at("rotation_order").get<std::string>();
        j.has_position_channels = item.at("position_channels").get<bool>();
        if (item.contains("end_site")) {
            const auto e = item["end_site"];
            j.end_site = geo::Vec3{e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()};
        }
        s.joints.push_back(std::move(j));
    }
    s.validate();
    return s;
}

std::string manifest_to_json(const std::vector<ManifestEntry>& entries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) arr.push_back({{"path", e.path}, {"class", e.class_label}});
    return arr.dump(2) + "\n";
}

std::vector<ManifestEntry> manifest_from_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("manifest: invalid JSON: ") + e.what());
    }
    if (!arr.is_array()) throw Error("manifest: expected a JSON array");
    std::vector<ManifestEntry> entries;
    for (const auto& item : arr) {
        if (!item.contains("path") || !item.contains("class"))
            throw Error("manifest: entries need 'path' and 'class'");
        entries.push_back({item["path"].get<std::string>(), item["class"].get<int>()});
    }
    return entries;
}

}  // namespace phasekit
