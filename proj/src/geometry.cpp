#include "phasekit/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace phasekit::geo {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalize(const Vec3& a) {
    const double n = norm(a);
    return {a[0] / n, a[1] / n, a[2] / n};
}

Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            c[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
    return c;
}

Mat3 transpose(const Mat3& m) { return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}; }

Vec3 apply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

double trace(const Mat3& m) { return m[0] + m[4] + m[8]; }

Mat3 rot6d_to_matrix(const Rot6d& r, const std::string& context) {
    const Vec3 v1 = {r[0], r[1], r[2]};
    const Vec3 v2 = {r[3], r[4], r[5]};
    const double n1 = norm(v1);
    if (n1 < 1e-8)
        throw Error("rot6d_to_matrix: first vector near zero" + (context.empty() ? "" : " (" + context + ")"));
    const Vec3 c1 = scale(v1, 1.0 / n1);
    Vec3 u2 = sub(v2, scale(c1, dot(v2, c1)));
    const double n2 = norm(u2);
    if (n2 < 1e-8)
        throw Error("rot6d_to_matrix: vectors near parallel or second vector near zero" +
                    (context.empty() ? "" : " (" + context + ")"));
    const Vec3 c2 = scale(u2, 1.0 / n2);
    const Vec3 c3 = cross(c1, c2);
    return {c1[0], c2[0], c3[0], c1[1], c2[1], c3[1], c1[2], c2[2], c3[2]};
}

Rot6d matrix_to_rot6d(const Mat3& m) { return {m[0], m[3], m[6], m[1], m[4], m[7]}; }

double geodesic_distance(const Mat3& r1, const Mat3& r2) {
    const Mat3 rel = matmul(r1, transpose(r2));
    const double c = std::clamp((trace(rel) - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
}

Mat3 axis_angle_to_matrix(const Vec3& axis, double angle) {
    const Vec3 a = normalize(axis);
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    return {t * a[0] * a[0] + c,        t * a[0] * a[1] - s * a[2], t * a[0] * a[2] + s * a[1],
            t * a[0] * a[1] + s * a[2], t * a[1] * a[1] + c,        t * a[1] * a[2] - s * a[0],
            t * a[0] * a[2] - s * a[1], t * a[1] * a[2] + s * a[0], t * a[2] * a[2] + c};
}

Vec3 matrix_to_axis_angle(const Mat3& m) {
    const double c = std::clamp((trace(m) - 1.0) / 2.0, -1.0, 1.0);
    const double angle = std::acos(c);
    if (angle < 1e-12) return {0.0, 0.0, 0.0};
    if (angle > kPi - 1e-6) {
        // Near 180 degrees: extract axis from the symmetric part.
        Vec3 a = {std::sqrt(std::max(0.0, (m[0] + 1.0) / 2.0)),
                  std::sqrt(std::max(0.0, (m[4] + 1.0) / 2.0)),
                  std::sqrt(std::max(0.0, (m[8] + 1.0) / 2.0))};
        // Fix signs from off-diagonal sums.
        if (m[1] + m[3] < 0) a[1] = -a[1];
        if (m[2] + m[6] < 0) a[2] = -a[2];
        return scale(normalize(a), angle);
    }
    const double s = 2.0 * std::sin(angle);
    const Vec3 axis = {(m[7] - m[5]) / s, (m[2] - m[6]) / s, (m[3] - m[1]) / s};
    return scale(axis, angle);
}

Quat matrix_to_quat(const Mat3& m) {
    const double tr = trace(m);
    Quat q;
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        q = {0.25 * s, (m[7] - m[5]) / s, (m[2] - m[6]) / s, (m[3] - m[1]) / s};
    } else if (m[0] > m[4] && m[0] > m[8]) {
        double s = std::sqrt(1.0 + m[0] - m[4] - m[8]) * 2.0;
        q = {(m[7] - m[5]) / s, 0.25 * s, (m[1] + m[3]) / s, (m[2] + m[6]) / s};
    } else if (m[4] > m[8]) {
        double s = std::sqrt(1.0 + m[4] - m[0] - m[8]) * 2.0;
        q = {(m[2] - m[6]) / s, (m[1] + m[3]) / s, 0.25 * s, (m[5] + m[7]) / s};
    } else {
        double s = std::sqrt(1.0 + m[8] - m[0] - m[4]) * 2.0;
        q = {(m[3] - m[1]) / s, (m[2] + m[6]) / s, (m[5] + m[7]) / s, 0.25 * s};
    }
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    for (auto& v : q) v /= n;
    return q;
}

Mat3 quat_to_matrix(const Quat& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

Quat slerp(const Quat& a, const Quat& b, double t) {
    Quat bb = b;
    double d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
    if (d < 0.0) {
        d = -d;
        for (auto& v : bb) v = -v;
    }
    if (d > 1.0 - 1e-10) {
        Quat q;
        for (int i = 0; i < 4; ++i) q[i] = a[i] + t * (bb[i] - a[i]);
        const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        for (auto& v : q) v /= n;
        return q;
    }
    const double th = std::acos(d);
    const double s = std::sin(th);
    const double wa = std::sin((1.0 - t) * th) / s;
    const double wb = std::sin(t * th) / s;
    Quat q;
    for (int i = 0; i < 4; ++i) q[i] = wa * a[i] + wb * bb[i];
    return q;
}

namespace {

Mat3 axis_rot(char axis, double a) {
    const double c = std::cos(a), s = std::sin(a);
    switch (axis) {
        case 'X': return {1, 0, 0, 0, c, -s, 0, s, c};
        case 'Y': return {c, 0, s, 0, 1, 0, -s, 0, c};
        case 'Z': return {c, -s, 0, s, c, 0, 0, 0, 1};
        default: throw Error(std::string("unknown rotation axis '") + axis + "'");
    }
}

void validate_order(const std::string& order) {
    if (order.size() != 3) throw Error("Euler order must have 3 axes, got '" + order + "'");
    bool seen[3] = {false, false, false};
    for (char c : order) {
        if (c != 'X' && c != 'Y' && c != 'Z') throw Error("Euler order has invalid axis in '" + order + "'");
        seen[c - 'X'] = true;
    }
    if (!(seen[0] && seen[1] && seen[2]))
        throw Error("only Tait-Bryan Euler orders (3 distinct axes) supported, got '" + order + "'");
}

}  // namespace

Mat3 euler_to_matrix(const std::string& order, const Vec3& angles_rad) {
    validate_order(order);
    Mat3 r = identity3();
    for (int i = 0; i < 3; ++i) r = matmul(r, axis_rot(order[static_cast<std::size_t>(i)], angles_rad[static_cast<std::size_t>(i)]));
    return r;
}

Vec3 matrix_to_euler(const std::string& order, const Mat3& m) {
    validate_order(order);
    auto asin_c = [](double v) { return std::asin(std::clamp(v, -1.0, 1.0)); };
    double a0, a1, a2;  // angles in channel order
    if (order == "XYZ") {
        a1 = asin_c(m[2]);
        a0 = std::atan2(-m[5], m[8]);
        a2 = std::atan2(-m[1], m[0]);
    } else if (order == "XZY") {
        a1 = asin_c(-m[1]);
        a0 = std::atan2(m[7], m[4]);
        a2 = std::atan2(m[2], m[0]);
    } else if (order == "YXZ") {
        a1 = asin_c(-m[5]);
        a0 = std::atan2(m[2], m[8]);
        a2 = std::atan2(m[3], m[4]);
    } else if (order == "YZX") {
        a1 = asin_c(m[3]);
        a0 = std::atan2(-m[6], m[0]);
        a2 = std::atan2(-m[5], m[4]);
    } else if (order == "ZXY") {
        a1 = asin_c(m[7]);
        a0 = std::atan2(-m[1], m[4]);
        a2 = std::atan2(-m[6], m[8]);
    } else {  // ZYX
        a1 = asin_c(-m[6]);
        a0 = std::atan2(m[3], m[0]);
        a2 = std::atan2(m[7], m[8]);
    }
    return {a0, a1, a2};
}

}  // namespace phasekit::geo
