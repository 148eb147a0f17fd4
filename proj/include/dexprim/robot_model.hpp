#pragma once

#include "dexprim/common.hpp"

#include <array>

namespace dexprim {

/// One 3-DOF revolute finger. Frames compose as
///   base * (link_offsets[0] * R(axis0, q0)) * (link_offsets[1] * R(axis1, q1))
///        * (link_offsets[2] * R(axis2, q2)) * tip_offset
/// and link l's frame is the frame right after joint l rotates.
struct FingerChain {
  Transform base_pose = Transform::Identity();
  std::array<Vec3, 3> joint_axes{Vec3::UnitZ(), Vec3::UnitY(), Vec3::UnitY()};
  std::array<Transform, 3> link_offsets{Transform::Identity(), Transform::Identity(),
                                        Transform::Identity()};
  Transform tip_offset = Transform::Identity();
  Vec3 joint_lower = Vec3::Constant(-2.7);
  Vec3 joint_upper = Vec3::Constant(2.7);
  Vec3 vel_limit = Vec3::Constant(10.0);
  Vec3 link_masses = Vec3::Zero();
  std::array<Vec3, 3> link_coms{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  double torque_limit = 0.36;

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(joint_axes[i].norm() - 1.0) > 1e-12)
        throw InvalidInput("FingerChain: joint axis is not unit-norm");
      if (!(joint_lower[i] < joint_upper[i]))
        throw InvalidInput("FingerChain: joint_lower must be below joint_upper");
      if (!(vel_limit[i] > 0.0)) throw InvalidInput("FingerChain: vel_limit must be positive");
      if (link_masses[i] < 0.0) throw InvalidInput("FingerChain: negative link mass");
      if (!is_rotation(link_offsets[i].linear(), 1e-10))
        throw InvalidInput("FingerChain: link offset rotation is not orthonormal");
    }
    if (!is_rotation(base_pose.linear(), 1e-10) || !is_rotation(tip_offset.linear(), 1e-10))
      throw InvalidInput("FingerChain: base/tip rotation is not orthonormal");
    if (!(torque_limit > 0.0)) throw InvalidInput("FingerChain: torque_limit must be positive");
  }
};

struct RobotModel {
  std::array<FingerChain, kNumFingers> fingers;
  Vec3 gravity{0.0, 0.0, -9.81};

  Vec9 joint_lower() const { return stack([](const FingerChain& f) { return f.joint_lower; }); }
  Vec9 joint_upper() const { return stack([](const FingerChain& f) { return f.joint_upper; }); }
  Vec9 vel_limit() const { return stack([](const FingerChain& f) { return f.vel_limit; }); }

  double base_yaw(int finger) const {
    const Mat3& r = fingers[finger].base_pose.linear();
    return std::atan2(r(1, 0), r(0, 0));
  }

  /// Checks every chain plus the 120-degree arrangement of the finger bases.
  void validate() const {
    for (const auto& f : fingers) f.validate();
    require_finite(gravity, "RobotModel gravity");
    for (int i = 0; i < kNumFingers; ++i) {
      const double d = wrap_angle(base_yaw((i + 1) % kNumFingers) - base_yaw(i));
      if (std::abs(d - 2.0 * kPi / 3.0) > 1e-9)
        throw InvalidInput("RobotModel: finger bases must be spaced 2*pi/3 apart in yaw");
    }
  }

 private:
  template <class F>
  Vec9 stack(F&& get) const {
    Vec9 v;
    for (int i = 0; i < kNumFingers; ++i) v.segment<3>(3 * i) = get(fingers[i]);
    return v;
  }
};

struct JointState {
  Vec9 q = Vec9::Zero();
  Vec9 qdot = Vec9::Zero();
};

/// World-frame joint origins, axes, link frames and tip of one finger.
struct FingerFrames {
  std::array<Vec3, 3> joint_pos;
  std::array<Vec3, 3> joint_axis;
  std::array<Transform, 3> link;
  Vec3 tip;
};

inline FingerFrames finger_frames(const FingerChain& chain, const Vec3& q) {
  FingerFrames out;
  Transform t = chain.base_pose;
  for (int j = 0; j < 3; ++j) {
    t = t * chain.link_offsets[j];
    out.joint_pos[j] = t.translation();
    out.joint_axis[j] = t.linear() * chain.joint_axes[j];
    t.rotate(Eigen::AngleAxisd(q[j], chain.joint_axes[j]));
    out.link[j] = t;
  }
  out.tip = (t * chain.tip_offset).translation();
  return out;
}

/// Fingertip world positions stacked as [tip0; tip1; tip2].
inline Vec9 forward_kinematics(const RobotModel& model, const Vec9& q) {
  require_finite(q, "forward_kinematics q");
  Vec9 x;
  for (int f = 0; f < kNumFingers; ++f)
    x.segment<3>(3 * f) = finger_frames(model.fingers[f], q.segment<3>(3 * f)).tip;
  return x;
}

inline Mat3 finger_jacobian(const FingerFrames& fr) {
  Mat3 j;
  for (int c = 0; c < 3; ++c) j.col(c) = fr.joint_axis[c].cross(fr.tip - fr.joint_pos[c]);
  return j;
}

/// Second derivatives of one fingertip: entry [i][j] is d2 tip / dq_i dq_j.
inline std::array<std::array<Vec3, 3>, 3> finger_hessian(const FingerFrames& fr) {
  std::array<std::array<Vec3, 3>, 3> h;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int lo = std::min(i, j), hi = std::max(i, j);
      h[i][j] = fr.joint_axis[lo].cross(fr.joint_axis[hi].cross(fr.tip - fr.joint_pos[hi]));
    }
  return h;
}

/// Contracts finger_hessian with a weight on the tip coordinates: sum_c w_c d2 tip_c.
inline Mat3 weighted_finger_hessian(const FingerFrames& fr, const Vec3& w) {
  const auto h = finger_hessian(fr);
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = w.dot(h[i][j]);
  return m;
}

/// Block-diagonal fingertip Jacobian (d tip / d q), analytic from the chain.
inline Mat9 fingertip_jacobian(const RobotModel& model, const Vec9& q) {
  require_finite(q, "fingertip_jacobian q");
  Mat9 jac = Mat9::Zero();
  for (int f = 0; f < kNumFingers; ++f)
    jac.block<3, 3>(3 * f, 3 * f) =
        finger_jacobian(finger_frames(model.fingers[f], q.segment<3>(3 * f)));
  return jac;
}

/// Joint torque that holds the fingers static against their own weight
/// (gradient of the links' gravitational potential).
inline Vec9 gravity_compensation(const RobotModel& model, const Vec9& q) {
  require_finite(q, "gravity_compensation q");
  Vec9 tau = Vec9::Zero();
  for (int f = 0; f < kNumFingers; ++f) {
    const FingerChain& chain = model.fingers[f];
    const FingerFrames fr = finger_frames(chain, q.segment<3>(3 * f));
    for (int l = 0; l < 3; ++l) {
      const Vec3 com = fr.link[l] * chain.link_coms[l];
      const Vec3 weight = chain.link_masses[l] * model.gravity;
      for (int i = 0; i <= l; ++i)
        tau[3 * f + i] -= weight.dot(fr.joint_axis[i].cross(com - fr.joint_pos[i]));
    }
  }
  return tau;
}

inline double gravitational_potential(const RobotModel& model, const Vec9& q) {
  double v = 0.0;
  for (int f = 0; f < kNumFingers; ++f) {
    const FingerChain& chain = model.fingers[f];
    const FingerFrames fr = finger_frames(chain, q.segment<3>(3 * f));
    for (int l = 0; l < 3; ++l)
      v -= chain.link_masses[l] * model.gravity.dot(fr.link[l] * chain.link_coms[l]);
  }
  return v;
}

inline JointState clamp_to_limits(const RobotModel& model, const Vec9& q, const Vec9& qdot) {
  require_finite(q, "clamp_to_limits q");
  require_finite(qdot, "clamp_to_limits qdot");
  const Vec9 vmax = model.vel_limit();
  return {q.cwiseMax(model.joint_lower()).cwiseMin(model.joint_upper()),
          qdot.cwiseMax(-vmax).cwiseMin(vmax)};
}

/// Damped least-squares fingertip IK for one finger, started from q_init.
inline Vec3 finger_ik(const FingerChain& chain, const Vec3& q_init, const Vec3& target,
                      int max_iters = 20, double tol = 1e-10) {
  Vec3 q = q_init;
  constexpr double damping = 1e-4;
  for (int it = 0; it < max_iters; ++it) {
    const FingerFrames fr = finger_frames(chain, q);
    const Vec3 err = target - fr.tip;
    if (err.norm() < tol) break;
    const Mat3 j = finger_jacobian(fr);
    const Mat3 jjt = j * j.transpose() + damping * Mat3::Identity();
    q += j.transpose() * jjt.ldlt().solve(err);
    q = q.cwiseMax(chain.joint_lower).cwiseMin(chain.joint_upper);
  }
  return q;
}

namespace defaults {

inline constexpr double kBaseRadius = 0.08;
inline constexpr double kBaseHeight = 0.20;
inline constexpr double kUpperLink = 0.16;
inline constexpr double kLowerLink = 0.16;

/// Yaw-pitch-pitch finger hanging from a base whose x axis points at the arena center.
inline FingerChain finger(double mount_angle) {
  FingerChain c;
  c.base_pose = make_transform(
      Vec3{kBaseRadius * std::cos(mount_angle), kBaseRadius * std::sin(mount_angle), kBaseHeight},
      Vec3{0.0, 0.0, wrap_angle(mount_angle + kPi)});
  c.joint_axes = {Vec3::UnitZ(), Vec3::UnitY(), Vec3::UnitY()};
  c.link_offsets = {Transform::Identity(), Transform::Identity(),
                    make_transform(Vec3{0.0, 0.0, -kUpperLink}, Vec3::Zero())};
  c.tip_offset = make_transform(Vec3{0.0, 0.0, -kLowerLink}, Vec3::Zero());
  c.link_masses = Vec3{0.10, 0.10, 0.05};
  c.link_coms = {Vec3::Zero(), Vec3{0.0, 0.0, -kUpperLink / 2}, Vec3{0.0, 0.0, -kLowerLink / 2}};
  return c;
}

inline RobotModel robot_model() {
  RobotModel m;
  for (int i = 0; i < kNumFingers; ++i) m.fingers[i] = finger(2.0 * kPi * i / kNumFingers);
  m.validate();
  return m;
}

/// Knees out, tips about 7 cm above the table next to their own base.
inline Vec9 home_configuration() {
  Vec9 q;
  for (int f = 0; f < kNumFingers; ++f) q.segment<3>(3 * f) << 0.0, 1.2, -2.3;
  return q;
}

}  // namespace defaults

}  // namespace dexprim
