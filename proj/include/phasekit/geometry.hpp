#pragma once

#include <array>
#include <string>

#include "phasekit/common.hpp"

namespace phasekit::geo {

using Vec3 = std::array<double, 3>;
// Row-major 3x3 rotation matrix.
using Mat3 = std::array<double, 9>;
// First two columns of a rotation matrix, stacked: (c1x,c1y,c1z, c2x,c2y,c2z).
using Rot6d = std::array<double, 6>;
// (w, x, y, z)
using Quat = std::array<double, 4>;

inline Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& a);
Vec3 normalize(const Vec3& a);

Mat3 identity3();
Mat3 matmul(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& m);
Vec3 apply(const Mat3& m, const Vec3& v);
double trace(const Mat3& m);

// Gram-Schmidt decoding of the 6D representation. Throws on degenerate input
// (near-zero or near-parallel vectors); context is prepended to the message.
Mat3 rot6d_to_matrix(const Rot6d& r, const std::string& context = "");
Rot6d matrix_to_rot6d(const Mat3& m);

// arccos((tr(R1 R2^T) - 1) / 2) with the clamp used everywhere else; [0, pi].
double geodesic_distance(const Mat3& r1, const Mat3& r2);

Mat3 axis_angle_to_matrix(const Vec3& axis, double angle);
// Log map: returns axis*angle (zero vector for identity).
Vec3 matrix_to_axis_angle(const Mat3& m);

Quat matrix_to_quat(const Mat3& m);
Mat3 quat_to_matrix(const Quat& q);
Quat slerp(const Quat& a, const Quat& b, double t);

// Intrinsic Euler conversions; `order` is a string like "ZYX" meaning the
// rotation is applied as R = R_Z * R_Y * R_X (BVH channel convention).
Mat3 euler_to_matrix(const std::string& order, const Vec3& angles_rad);
Vec3 matrix_to_euler(const std::string& order, const Mat3& m);

}  // namespace phasekit::geo
