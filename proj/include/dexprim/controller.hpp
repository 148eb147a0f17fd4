#pragma once

#include "dexprim/collocation.hpp"
#include "dexprim/robot_model.hpp"

namespace dexprim {

struct ImpedanceGains {
  Vec3 kp = Vec3::Constant(200.0);
  Vec3 kv = Vec3::Constant(5.0);
  double torque_limit = 0.36;

  void validate() const {
    require_finite(kp, "ImpedanceGains kp");
    require_finite(kv, "ImpedanceGains kv");
    if ((kp.array() < 0.0).any() || (kv.array() < 0.0).any())
      throw InvalidInput("ImpedanceGains: kp and kv must be nonnegative");
    if (!(torque_limit > 0.0)) throw InvalidInput("ImpedanceGains: torque_limit must be positive");
  }
};

struct ControlCommand {
  Vec9 tau = Vec9::Zero();
};

inline Vec9 clamp_torque(const Vec9& tau, double limit) {
  return tau.cwiseMax(-limit).cwiseMin(limit);
}

/// Cartesian reference for all three fingertips, stacked per finger.
struct FingertipReference {
  Vec9 x = Vec9::Zero();
  Vec9 xdot = Vec9::Zero();
  Vec9 force = Vec9::Zero();  // what each finger should exert on the object, world frame
};

/// tau = J^T (kp (x_ref - x) + kv (xdot_ref - xdot) + force) + g_hand, before clamping.
inline Vec9 impedance_torque_unclamped(const RobotModel& model, const JointState& js,
                                       const FingertipReference& ref, const ImpedanceGains& gains) {
  require_finite(js.q, "impedance_torque q");
  require_finite(js.qdot, "impedance_torque qdot");
  require_finite(ref.x, "impedance_torque x_ref");
  require_finite(ref.xdot, "impedance_torque xdot_ref");
  require_finite(ref.force, "impedance_torque force");
  gains.validate();
  const Vec9 x = forward_kinematics(model, js.q);
  const Mat9 jac = fingertip_jacobian(model, js.q);
  const Vec9 xdot = jac * js.qdot;
  Vec9 f;
  for (int i = 0; i < kNumFingers; ++i) {
    const auto s = Eigen::seqN(3 * i, 3);
    f(s) = gains.kp.cwiseProduct(ref.x(s) - x(s)) + gains.kv.cwiseProduct(ref.xdot(s) - xdot(s)) +
           ref.force(s);
  }
  Vec9 tau = gravity_compensation(model, js.q);
  for (int i = 0; i < kNumFingers; ++i)
    tau.segment<3>(3 * i) += jac.block<3, 3>(3 * i, 3 * i).transpose() * f.segment<3>(3 * i);
  return tau;
}

inline ControlCommand impedance_torque(const RobotModel& model, const JointState& js,
                                       const FingertipReference& ref, const ImpedanceGains& gains) {
  return {clamp_torque(impedance_torque_unclamped(model, js, ref, gains), gains.torque_limit)};
}

/// Reference at time t: positions interpolated between knots, forces interpolated or
/// held per the trajectory, velocity the forward difference over the current interval. From the last knot on, the final
/// position and force are held with zero velocity.
inline FingertipReference sample_reference(const FingertipTrajectory& traj, double t) {
  const KnotGrid& g = traj.grid;
  if (!std::isfinite(t) || t < g.start()) throw RangeError("sample_reference: t precedes the trajectory");
  FingertipReference r;
  if (t >= g.end()) {
    r.x = traj.x[g.T];
    r.force = traj.force[g.T];
    return r;
  }
  r.x = interpolate_knots(g, traj.x, t);
  const double* begin = g.times.data();
  const int k = static_cast<int>(std::upper_bound(begin, begin + g.T + 1, t) - begin) - 1;
  r.force = traj.force_held ? traj.force[k] : interpolate_knots(g, traj.force, t);
  r.xdot = (traj.x[k + 1] - traj.x[k]) / g.step(k);
  return r;
}

inline ControlCommand track(const RobotModel& model, const FingertipTrajectory& traj, double t,
                            const JointState& js, const ImpedanceGains& gains) {
  return impedance_torque(model, js, sample_reference(traj, t), gains);
}

}  // namespace dexprim
