#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "phasekit/skeleton.hpp"

namespace phasekit {

namespace {

constexpr double kDeg2Rad = 3.14159265358979323846 / 180.0;
constexpr int kMaxDepth = 256;

struct Token {
    std::string text;
    int line;
    int col;
};

class Lexer {
public:
    explicit Lexer(const std::string& text) : text_(text) {}

    bool eof() {
        skip_ws();
        return pos_ >= text_.size();
    }

    Token next() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError(line_, col_, "unexpected end of input");
        Token t{"", line_, col_};
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            if (text_[pos_] == '{' || text_[pos_] == '}') {
                if (t.text.empty()) {
                    t.text.push_back(text_[pos_]);
                    advance();
                }
                return t;
            }
            t.text.push_back(text_[pos_]);
            advance();
        }
        return t;
    }

    Token expect(const std::string& word) {
        Token t = next();
        if (t.text != word) throw ParseError(t.line, t.col, "expected '" + word + "', got '" + t.text + "'");
        return t;
    }

    double number() {
        Token t = next();
        const char* s = t.text.c_str();
        char* end = nullptr;
        const double v = std::strtod(s, &end);
        if (end == s || *end != '\0' || !std::isfinite(v))
            throw ParseError(t.line, t.col, "expected a number, got '" + t.text + "'");
        return v;
    }

    long integer() {
        Token t = next();
        const char* s = t.text.c_str();
        char* end = nullptr;
        const long v = std::strtol(s, &end, 10);
        if (end == s || *end != '\0')
            throw ParseError(t.line, t.col, "expected an integer, got '" + t.text + "'");
        return v;
    }

    int line() const { return line_; }
    int col() const { return col_; }

private:
    void advance() {
        if (text_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) advance();
    }

    const std::string& text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

struct ChannelRef {
    int joint;
    char kind;  // 'P' position, 'R' rotation
    char axis;  // 'X','Y','Z'
};

struct ParserState {
    Skeleton skel;
    std::vector<ChannelRef> channels;
};

void parse_joint_body(Lexer& lx, ParserState& st, int joint_index, int depth, double unit_scale) {
    if (depth > kMaxDepth) throw ParseError(lx.line(), lx.col(), "hierarchy nesting too deep");
    lx.expect("{");
    bool saw_offset = false;
    while (true) {
        Token t = lx.next();
        if (t.text == "}") break;
        if (t.text == "OFFSET") {
            geo::Vec3 off = {lx.number() * unit_scale, lx.number() * unit_scale,
                             lx.number() * unit_scale};
            st.skel.joints[static_cast<std::size_t>(joint_index)].offset = off;
            saw_offset = true;
        } else if (t.text == "CHANNELS") {
            const long n = lx.integer();
            if (n < 0 || n > 6) throw ParseError(t.line, t.col, "channel count out of range");
            std::string rot_order;
            int pos_channels = 0;
            for (long i = 0; i < n; ++i) {
                Token ch = lx.next();
                char kind, axis;
                if (ch.text == "Xposition" || ch.text == "Yposition" || ch.text == "Zposition") {
                    kind = 'P';
                    axis = ch.text[0];
                    ++pos_channels;
                } else if (ch.text == "Xrotation" || ch.text == "Yrotation" || ch.text == "Zrotation") {
                    kind = 'R';
                    axis = ch.text[0];
                    rot_order.push_back(axis);
                } else {
                    throw ParseError(ch.line, ch.col, "unsupported channel name '" + ch.text + "'");
                }
                st.channels.push_back({joint_index, kind, axis});
            }
            if (!rot_order.empty() && rot_order.size() != 3)
                throw ParseError(t.line, t.col, "expected 0 or 3 rotation channels per joint, got " +
                                                    std::to_string(rot_order.size()));
            if (!rot_order.empty())
                st.skel.joints[static_cast<std::size_t>(joint_index)].rotation_order = rot_order;
            if (pos_channels > 0 && pos_channels != 3)
                throw ParseError(t.line, t.col, "expected 0 or 3 position channels per joint");
            st.skel.joints[static_cast<std::size_t>(joint_index)].has_position_channels = pos_channels == 3;
        } else if (t.text == "JOINT") {
            Token name = lx.next();
            if (name.text == "{" || name.text == "}")
                throw ParseError(name.line, name.col, "expected joint name");
            Joint j;
            j.name = name.text;
            j.parent = joint_index;
            st.skel.joints.push_back(j);
            parse_joint_body(lx, st, static_cast<int>(st.skel.joints.size()) - 1, depth + 1,
                             unit_scale);
        } else if (t.text == "End") {
            lx.expect("Site");
            lx.expect("{");
            lx.expect("OFFSET");
            geo::Vec3 off = {lx.number(), lx.number(), lx.number()};
            st.skel.joints[static_cast<std::size_t>(joint_index)].end_site = off;
            lx.expect("}");
        } else {
            throw ParseError(t.line, t.col, "unexpected token '" + t.text + "' in joint body");
        }
    }
    if (!saw_offset)
        throw ParseError(lx.line(), lx.col(),
                         "joint '" + st.skel.joints[static_cast<std::size_t>(joint_index)].name +
                             "' has no OFFSET");
}

}  // namespace

std::pair<Skeleton, MotionClip> parse_bvh(const std::string& text, const BvhOptions& opts) {
    Lexer lx(text);
    lx.expect("HIERARCHY");
    lx.expect("ROOT");
    Token root_name = lx.next();
    if (root_name.text == "{" || root_name.text == "}")
        throw ParseError(root_name.line, root_name.col, "expected root joint name");

    ParserState st;
    Joint root;
    root.name = root_name.text;
    root.parent = -1;
    st.skel.joints.push_back(root);
    parse_joint_body(lx, st, 0, 0, opts.unit_scale);
    st.skel.validate();

    lx.expect("MOTION");
    Token frames_tok = lx.next();
    if (frames_tok.text != "Frames:" && frames_tok.text != "Frames")
        throw ParseError(frames_tok.line, frames_tok.col, "expected 'Frames:'");
    const long frames = lx.integer();
    if (frames < 0) throw ParseError(frames_tok.line, frames_tok.col, "negative frame count");
    Token ft = lx.next();
    if (ft.text == "Frame") {
        Token t2 = lx.next();
        if (t2.text != "Time:" && t2.text != "Time")
            throw ParseError(t2.line, t2.col, "expected 'Frame Time:'");
    } else {
        throw ParseError(ft.line, ft.col, "expected 'Frame Time:'");
    }
    const double frame_time = lx.number();
    if (frame_time <= 0.0) throw ParseError(ft.line, ft.col, "frame time must be positive");

    const int j = st.skel.joint_count();
    const std::size_t per_frame = st.channels.size();

    auto skel_ptr = std::make_shared<Skeleton>(st.skel);
    MotionClip clip;
    clip.skeleton = skel_ptr;
    clip.frame_rate = 1.0 / frame_time;
    clip.rotations.assign(static_cast<std::size_t>(frames) * j, geo::Rot6d{1, 0, 0, 0, 1, 0});
    clip.root_positions.assign(static_cast<std::size_t>(frames), geo::Vec3{0, 0, 0});
    clip.times.resize(static_cast<std::size_t>(frames));

    std::vector<double> row(per_frame);
    for (long f = 0; f < frames; ++f) {
        for (std::size_t c = 0; c < per_frame; ++c) row[c] = lx.number();
        // Assemble per-joint Euler angles in declared channel order.
        std::vector<geo::Vec3> euler(static_cast<std::size_t>(j), geo::Vec3{0, 0, 0});
        std::vector<int> rot_seen(static_cast<std::size_t>(j), 0);
        for (std::size_t c = 0; c < per_frame; ++c) {
            const ChannelRef& ref = st.channels[c];
            if (ref.kind == 'P') {
                if (ref.joint == 0) {
                    clip.root_positions[static_cast<std::size_t>(f)][static_cast<std::size_t>(ref.axis - 'X')] =
                        row[c] * opts.unit_scale;
                }
                // Non-root position channels are parsed but not retained.
            } else {
                const std::size_t slot = static_cast<std::size_t>(rot_seen[static_cast<std::size_t>(ref.joint)]++);
                euler[static_cast<std::size_t>(ref.joint)][slot] = row[c] * kDeg2Rad;
            }
        }
        for (int ji = 0; ji < j; ++ji) {
            if (rot_seen[static_cast<std::size_t>(ji)] == 0) continue;
            const geo::Mat3 m = geo::euler_to_matrix(
                skel_ptr->joints[static_cast<std::size_t>(ji)].rotation_order,
                euler[static_cast<std::size_t>(ji)]);
            clip.rotations[static_cast<std::size_t>(f) * j + static_cast<std::size_t>(ji)] =
                geo::matrix_to_rot6d(m);
        }
        clip.times[static_cast<std::size_t>(f)] = frames > 1 ? static_cast<double>(f) / (frames - 1) : 0.0;
    }
    if (!lx.eof()) {
        Token extra = lx.next();
        throw ParseError(extra.line, extra.col, "trailing data after motion frames");
    }
    return {*skel_ptr, clip};
}

namespace {

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_joint(std::ostringstream& os, const Skeleton& skel, int index, int indent) {
    const Joint& joint = skel.joints[static_cast<std::size_t>(index)];
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    os << pad << (joint.parent < 0 ? "ROOT " : "JOINT ") << joint.name << "\n" << pad << "{\n";
    const std::string pad2(static_cast<std::size_t>(indent + 1) * 2, ' ');
    os << pad2 << "OFFSET " << fmt6(joint.offset[0]) << " " << fmt6(joint.offset[1]) << " "
       << fmt6(joint.offset[2]) << "\n";
    if (joint.parent < 0) {
        os << pad2 << "CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation\n";
    } else {
        os << pad2 << "CHANNELS 3 Zrotation Yrotation Xrotation\n";
    }
    bool has_child = false;
    for (int c = 0; c < skel.joint_count(); ++c) {
        if (skel.joints[static_cast<std::size_t>(c)].parent == index) {
            has_child = true;
            write_joint(os, skel, c, indent + 1);
        }
    }
    if (!has_child) {
        const geo::Vec3 end = joint.end_site.value_or(geo::Vec3{0, 0, 0});
        os << pad2 << "End Site\n" << pad2 << "{\n";
        os << std::string(static_cast<std::size_t>(indent + 2) * 2, ' ') << "OFFSET " << fmt6(end[0]) << " "
           << fmt6(end[1]) << " " << fmt6(end[2]) << "\n";
        os << pad2 << "}\n";
    }
    os << pad << "}\n";
}

}  // namespace

std::string write_bvh(const Skeleton& skeleton, const MotionClip& clip) {
    if (clip.frames() == 0) throw Error("write_bvh: refusing to write a clip with no frames");
    if (clip.joint_count() != skeleton.joint_count())
        throw Error("write_bvh: clip is not bound to this skeleton");
    skeleton.validate();

    std::ostringstream os;
    os << "HIERARCHY\n";
    write_joint(os, skeleton, 0, 0);
    os << "MOTION\n";
    os << "Frames: " << clip.frames() << "\n";
    os << "Frame Time: " << fmt6(1.0 / clip.frame_rate) << "\n";
    const int j = skeleton.joint_count();
    for (int f = 0; f < clip.frames(); ++f) {
        const geo::Vec3& p = clip.root_positions[static_cast<std::size_t>(f)];
        os << fmt6(p[0]) << " " << fmt6(p[1]) << " " << fmt6(p[2]);
        for (int ji = 0; ji < j; ++ji) {
            const geo::Mat3 m = geo::rot6d_to_matrix(
                clip.rot(f, ji), "frame " + std::to_string(f) + ", joint " +
                                     skeleton.joints[static_cast<std::size_t>(ji)].name);
            const geo::Vec3 e = geo::matrix_to_euler("ZYX", m);
            for (int a = 0; a < 3; ++a) os << " " << fmt6(e[static_cast<std::size_t>(a)] / kDeg2Rad);
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace phasekit
