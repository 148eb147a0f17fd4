#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dexprim {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat69 = Eigen::Matrix<double, 6, 9>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Transform = Eigen::Isometry3d;

inline constexpr int kNumFingers = 3;
inline constexpr int kJointsPerFinger = 3;
inline constexpr int kNumJoints = kNumFingers * kJointsPerFinger;
inline constexpr double kPi = std::numbers::pi;

// Error hierarchy. Everything thrown by the library derives from Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidInput : Error {
  using Error::Error;
};
struct RangeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct NumericFailure : Error {
  NumericFailure(const std::string& what, VecX iterate = {})
      : Error(what), iterate(std::move(iterate)) {}
  VecX iterate;
};
struct SolverFailure : Error {
  using Error::Error;
};
struct PreconditionViolation : Error {
  using Error::Error;
};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <class Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entry");
}

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

/// Wraps an angle to (-pi/2, pi/2], the residual of a pi-periodic quantity.
inline double wrap_half_turn(double a) {
  double w = std::remainder(a, kPi);
  if (w <= -kPi / 2.0) w += kPi;
  return w;
}

inline Mat3 rot_x(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix();
}
inline Mat3 rot_y(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix();
}
inline Mat3 rot_z(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix();
}

/// Extrinsic roll-pitch-yaw (R = Rz(yaw) * Ry(pitch) * Rx(roll)).
inline Mat3 rpy_to_matrix(const Vec3& rpy) {
  return rot_z(rpy.z()) * rot_y(rpy.y()) * rot_x(rpy.x());
}

inline Vec3 matrix_to_rpy(const Mat3& r) {
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return {roll, pitch, yaw};
}

/// Partial derivatives of rpy_to_matrix with respect to roll, pitch and yaw.
inline std::array<Mat3, 3> rpy_matrix_derivatives(const Vec3& rpy) {
  const Mat3 rx = rot_x(rpy.x());
  const Mat3 ry = rot_y(rpy.y());
  const Mat3 rz = rot_z(rpy.z());
  const Mat3 ex = skew(Vec3::UnitX());
  const Mat3 ey = skew(Vec3::UnitY());
  const Mat3 ez = skew(Vec3::UnitZ());
  return {rz * ry * rx * ex, rz * ry * ey * rx, ez * rz * ry * rx};
}

/// Second partials of rpy_to_matrix; entry [a][b] differentiates by angles a and b.
inline std::array<std::array<Mat3, 3>, 3> rpy_matrix_second_derivatives(const Vec3& rpy) {
  const Mat3 rx = rot_x(rpy.x());
  const Mat3 ry = rot_y(rpy.y());
  const Mat3 rz = rot_z(rpy.z());
  const Mat3 ex = skew(Vec3::UnitX());
  const Mat3 ey = skew(Vec3::UnitY());
  const Mat3 ez = skew(Vec3::UnitZ());
  std::array<std::array<Mat3, 3>, 3> out;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      // Each factor's n-th derivative multiplies it by its generator n times.
      const int n[3] = {(a == 0) + (b == 0), (a == 1) + (b == 1), (a == 2) + (b == 2)};
      Mat3 fx = rx, fy = ry, fz = rz;
      for (int i = 0; i < n[0]; ++i) fx = fx * ex;
      for (int i = 0; i < n[1]; ++i) fy = fy * ey;
      for (int i = 0; i < n[2]; ++i) fz = ez * fz;
      out[a][b] = fz * fy * fx;
    }
  return out;
}

inline Transform make_transform(const Vec3& xyz, const Vec3& rpy) {
  Transform t = Transform::Identity();
  t.linear() = rpy_to_matrix(rpy);
  t.translation() = xyz;
  return t;
}

inline bool is_rotation(const Mat3& r, double tol) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         r.determinant() > 0.0;
}

inline auto tip(Vec9& v, int finger) { return v.segment<3>(3 * finger); }
inline Vec3 tip(const Vec9& v, int finger) { return v.segment<3>(3 * finger); }

}  // namespace dexprim
