#pragma once

#include "dexprim/controller.hpp"
#include "dexprim/object_model.hpp"
#include "dexprim/robot_model.hpp"

#include <charconv>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace dexprim {

struct SimConfig {
  double dt = 1e-3;
  Vec9 joint_inertia = Vec9::Constant(0.004);
  double table_friction = 0.7;
  double attach_tolerance = 0.01;
  Vec3 gravity{0.0, 0.0, -9.81};

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("SimConfig: dt must be positive");
    if (!(joint_inertia.minCoeff() > 0.0)) throw InvalidInput("SimConfig: joint_inertia must be positive");
    if (!(table_friction >= 0.0)) throw InvalidInput("SimConfig: table_friction must be >= 0");
    if (!(attach_tolerance >= 0.0)) throw InvalidInput("SimConfig: attach_tolerance must be >= 0");
    require_finite(gravity, "SimConfig gravity");
  }
};

struct ObjectState {
  ObjectPose pose;
  Vec3 velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();  // world frame
};

inline double kinetic_energy(const Cuboid& cuboid, const ObjectState& s) {
  const Vec3 wb = s.pose.orientation.conjugate() * s.angular_velocity;
  return 0.5 * cuboid.mass * s.velocity.squaredNorm() + 0.5 * wb.dot(cuboid.inertia * wb);
}

/// Semi-implicit Euler on double-integrator joints. Joints that reach a limit are
/// pinned there with their velocity zeroed.
inline JointState step_fingers(const SimConfig& config, const RobotModel& model, const JointState& js,
                               const Vec9& tau) {
  require_finite(tau, "step_fingers tau");
  const Vec9 load = gravity_compensation(model, js.q);
  const Vec9 vmax = model.vel_limit(), lo = model.joint_lower(), hi = model.joint_upper();
  JointState out;
  out.qdot = js.qdot + config.dt * (tau - load).cwiseQuotient(config.joint_inertia);
  out.qdot = out.qdot.cwiseMax(-vmax).cwiseMin(vmax);
  out.q = js.q + config.dt * out.qdot;
  for (int i = 0; i < kNumJoints; ++i) {
    if (out.q[i] < lo[i] || out.q[i] > hi[i]) {
      out.q[i] = std::clamp(out.q[i], lo[i], hi[i]);
      out.qdot[i] = 0.0;
    }
  }
  return out;
}

struct AppliedForce {
  Vec3 force = Vec3::Zero();
  Vec3 point = Vec3::Zero();  // world application point
};

/// One step of the object under point forces, gravity and the table at z = 0. The
/// twist is updated first, then the pose advances with the mean of old and new twist
/// in flight and with the new twist on the table (orientation by the exponential map). While the cuboid rests on the table and the
/// net vertical force does not lift it, the table cancels the vertical force and the
/// tilting torques and applies Coulomb friction to planar sliding and to spin.
inline ObjectState step_object(const SimConfig& config, const Cuboid& cuboid, const ObjectState& s,
                               const std::array<AppliedForce, 3>& forces) {
  Vec3 f = cuboid.mass * config.gravity;
  Vec3 torque = Vec3::Zero();
  for (const auto& a : forces) {
    require_finite(a.force, "step_object force");
    require_finite(a.point, "step_object point");
    f += a.force;
    torque += (a.point - s.pose.position).cross(a.force);
  }
  constexpr double kTableEps = 1e-9;
  const bool resting = lowest_point(cuboid, s.pose) <= kTableEps && f.z() <= 0.0;
  Vec3 w0 = s.angular_velocity;
  double normal = 0.0;
  if (resting) {
    normal = -f.z();
    f.z() = 0.0;
    torque.x() = torque.y() = 0.0;
    w0.x() = w0.y() = 0.0;
  }

  ObjectState out;
  const double dt = config.dt;
  Vec3 v0 = s.velocity;
  if (resting) v0.z() = std::max(v0.z(), 0.0);
  Vec3 v1 = v0 + dt * f / cuboid.mass;
  if (resting) {
    const double drop = config.table_friction * normal * dt / cuboid.mass;
    const double planar = std::hypot(v1.x(), v1.y());
    const double scale = planar > drop ? (planar - drop) / planar : 0.0;
    v1.x() *= scale;
    v1.y() *= scale;
  }

  // Rotational dynamics in the body frame, where the inertia is constant.
  const Eigen::Quaterniond& q0 = s.pose.orientation;
  const Vec3 wb0 = q0.conjugate() * w0;
  const Vec3 tb = q0.conjugate() * torque;
  Vec3 wb1 = wb0 + dt * cuboid.inertia.ldlt().solve(tb - wb0.cross(cuboid.inertia * wb0));
  Vec3 w1 = q0 * wb1;
  if (resting) {
    w1.x() = w1.y() = 0.0;
    // Torsional Coulomb friction over the footprint, with the contact pressure lumped
    // at a third of the footprint's half-extent sum.
    const Mat3 r = q0.toRotationMatrix();
    double radius = 0.0;
    for (int i = 0; i < 3; ++i) radius += (1.0 - std::abs(r(2, i))) * cuboid.half_extents[i];
    const double izz = (r * cuboid.inertia * r.transpose())(2, 2);
    const double spin_drop = config.table_friction * normal * (radius / 3.0) * dt / izz;
    w1.z() = std::abs(w1.z()) > spin_drop ? w1.z() - std::copysign(spin_drop, w1.z()) : 0.0;
  }

  // On the table the pose advances with the new twist, which keeps Coulomb friction
  // dissipative per step even when the applied load reverses the motion.
  out.pose.position = s.pose.position + (resting ? Vec3(dt * v1) : Vec3(0.5 * dt * (v0 + v1)));
  const Vec3 rot = resting ? Vec3(dt * w1) : Vec3(0.5 * dt * (w0 + w1));
  const double angle = rot.norm();
  if (angle > 0.0)
    out.pose.orientation = (Eigen::Quaterniond(Eigen::AngleAxisd(angle, rot / angle)) * q0).normalized();
  else
    out.pose.orientation = q0;
  out.velocity = v1;
  out.angular_velocity = w1;

  const double low = lowest_point(cuboid, out.pose);
  if (low < -1e-12) {
    out.pose.position.z() -= low;
    out.velocity.z() = std::max(out.velocity.z(), 0.0);
  }
  return out;
}

struct ContactTransfer {
  std::array<AppliedForce, 3> applied;
  std::array<bool, 3> attached{false, false, false};
};

/// A finger transfers its commanded world force at its contact point when its tip is
/// within the attach tolerance of that point and the force pushes into the face.
/// Other fingers transfer nothing.
inline ContactTransfer contact_force_transfer(const SimConfig& config, const RobotModel& model,
                                              const Vec9& q, const ObjectPose& pose,
                                              const GraspSpec* grasp, const Vec9& finger_forces) {
  ContactTransfer out;
  if (!grasp) return out;
  const Vec9 x = forward_kinematics(model, q);
  for (int f = 0; f < kNumFingers; ++f) {
    const ContactPoint& cp = grasp->for_finger(f);
    const Vec3 c = contact_world_position(pose, cp);
    const Vec3 n = pose.orientation * cp.normal_body();
    const Vec3 force = finger_forces.segment<3>(3 * f);
    if ((tip(x, f) - c).norm() <= config.attach_tolerance && n.dot(force) >= 0.0) {
      out.attached[f] = true;
      out.applied[f] = {force, c};
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring.

struct GoalSpec {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  int level = 1;

  void validate() const {
    if (level < 1 || level > 4) throw InvalidInput("GoalSpec: level must be 1-4");
    require_finite(position, "GoalSpec position");
    if (!(yaw > -kPi && yaw <= kPi)) throw InvalidInput("GoalSpec: yaw must lie in (-pi, pi]");
  }
};

struct ScoreWeights {
  double yaw = 0.1;  // m per rad, level 4 only
};

struct ScoreIncrement {
  double position = 0.0;
  double orientation = 0.0;
  double total() const { return position + orientation; }
};

inline ScoreIncrement score_terms(const Cuboid& cuboid, const ObjectPose& pose, const GoalSpec& goal,
                                  int level, const ScoreWeights& weights) {
  if (level < 1 || level > 4) throw InvalidInput("compute_score_step: level must be 1-4");
  ScoreIncrement s;
  s.position = -(pose.position - goal.position).norm();
  if (level == 4) s.orientation = -weights.yaw * std::abs(wrap_angle(heading_yaw(cuboid, pose) - goal.yaw));
  return s;
}

inline double compute_score_step(const Cuboid& cuboid, const ObjectPose& pose, const GoalSpec& goal,
                                 int level, const ScoreWeights& weights = {}) {
  return score_terms(cuboid, pose, goal, level, weights).total();
}

/// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

struct Score {
  double total = 0.0;
  double position = 0.0;
  double orientation = 0.0;
};

// ---------------------------------------------------------------------------
// Episodes.

/// What the planner asks of the fingers at one control step. Passive commands apply
/// gravity compensation only.
struct PlannerCommand {
  bool passive = true;
  FingertipReference reference;
};

struct TraceEvent {
  double time = 0.0;
  std::string name;
  std::string detail;
};

class Planner {
 public:
  virtual ~Planner() = default;
  virtual PlannerCommand update(double t, const JointState& js, const ObjectState& object) = 0;
  /// Contacts the fingers are meant to hold; nullptr while none are planned.
  virtual const GraspSpec* grasp() const { return nullptr; }
  /// Events produced since the last call.
  virtual std::vector<TraceEvent> take_events() { return {}; }
};

/// Applies gravity compensation only.
class NoOpPlanner : public Planner {
 public:
  PlannerCommand update(double, const JointState&, const ObjectState&) override { return {}; }
};

struct StepRecord {
  double time = 0.0;
  JointState joints;
  ObjectState object;
  Vec9 tau = Vec9::Zero();
  Vec9 contact_forces = Vec9::Zero();  // applied world force per finger
  std::array<bool, 3> attached{false, false, false};
  double score = 0.0;
};

struct EpisodeTrace {
  int level = 1;
  GoalSpec goal;
  double dt = 1e-3;
  int stride = 1;
  std::vector<StepRecord> steps;
  std::vector<TraceEvent> events;
};

struct EpisodeSetup {
  SimConfig sim;
  ImpedanceGains gains;
  ScoreWeights score;
  GoalSpec goal;
  ObjectPose initial_pose;
  Vec9 initial_q = defaults::home_configuration();
  double duration = 120.0;
  int record_stride = 1;  // keep every n-th step record
};

struct EpisodeResult {
  EpisodeTrace trace;
  Score score;
  bool failed = false;
  std::string failure;
  ObjectState final_object;
  int steps = 0;
};

inline double final_yaw_error(const Cuboid& cuboid, const ObjectPose& pose, const GoalSpec& goal) {
  return wrap_angle(heading_yaw(cuboid, pose) - goal.yaw);
}

/// Damped J^-T: the tip force a finger exerts for a joint torque beyond gravity load.
inline Vec3 tip_force_from_torque(const Mat3& jac, const Vec3& tau) {
  return (jac * jac.transpose() + 1e-10 * Mat3::Identity()).ldlt().solve(jac * tau);
}

/// Fingers attached to the object follow their contact points: IK places the tip on
/// the contact and the joint velocity reproduces the contact velocity.
inline void slave_finger(const RobotModel& model, JointState& js, int f, const Vec3& target,
                         const Vec3& target_velocity) {
  const FingerChain& chain = model.fingers[f];
  const Vec3 q = finger_ik(chain, js.q.segment<3>(3 * f), target);
  const Mat3 jac = finger_jacobian(finger_frames(chain, q));
  const Vec3 qd = jac.transpose() *
                  (jac * jac.transpose() + 1e-8 * Mat3::Identity()).ldlt().solve(target_velocity);
  js.q.segment<3>(3 * f) = q;
  js.qdot.segment<3>(3 * f) = qd.cwiseMax(-chain.vel_limit).cwiseMin(chain.vel_limit);
}

inline EpisodeResult run_episode(const RobotModel& model, const Cuboid& cuboid,
                                 const EpisodeSetup& setup, Planner& planner) {
  setup.sim.validate();
  setup.gains.validate();
  setup.goal.validate();
  setup.initial_pose.validate();
  if (!(setup.duration > 0.0)) throw InvalidInput("run_episode: duration must be positive");
  if (setup.record_stride < 1) throw InvalidInput("run_episode: record_stride must be >= 1");

  EpisodeResult res;
  res.trace.level = setup.goal.level;
  res.trace.goal = setup.goal;
  res.trace.dt = setup.sim.dt;
  res.trace.stride = setup.record_stride;
  const int n = static_cast<int>(std::llround(setup.duration / setup.sim.dt));
  res.trace.steps.reserve(n / setup.record_stride + 1);

  JointState js;
  js.q = clamp_to_limits(model, setup.initial_q, Vec9::Zero()).q;
  ObjectState obj;
  obj.pose = setup.initial_pose;
  CompensatedSum total, pos, ori;

  for (int step = 0; step < n; ++step) {
    const double t = step * setup.sim.dt;
    PlannerCommand cmd;
    try {
      cmd = planner.update(t, js, obj);
    } catch (const Error& e) {
      res.failed = true;
      res.failure = e.what();
      for (auto& ev : planner.take_events()) res.trace.events.push_back(std::move(ev));
      res.trace.events.push_back({t, "failure", e.what()});
      break;
    }
    for (auto& ev : planner.take_events()) res.trace.events.push_back(std::move(ev));

    const Vec9 g_hand = gravity_compensation(model, js.q);
    const Vec9 tau = cmd.passive ? clamp_torque(g_hand, setup.gains.torque_limit)
                                 : impedance_torque(model, js, cmd.reference, setup.gains).tau;

    // Tip forces implied by the torques beyond gravity load.
    const Mat9 jac = fingertip_jacobian(model, js.q);
    Vec9 tip_forces;
    for (int f = 0; f < kNumFingers; ++f)
      tip_forces.segment<3>(3 * f) =
          tip_force_from_torque(jac.block<3, 3>(3 * f, 3 * f), (tau - g_hand).segment<3>(3 * f));
    const ContactTransfer transfer =
        contact_force_transfer(setup.sim, model, js.q, obj.pose, planner.grasp(), tip_forces);

    ObjectState next_obj = step_object(setup.sim, cuboid, obj, transfer.applied);
    JointState next_js = step_fingers(setup.sim, model, js, tau);
    if (const GraspSpec* grasp = planner.grasp())
      for (int f = 0; f < kNumFingers; ++f) {
        if (!transfer.attached[f]) continue;
        const ContactPoint& cp = grasp->for_finger(f);
        const Vec3 c = contact_world_position(next_obj.pose, cp);
        const Vec3 cdot = next_obj.velocity + next_obj.angular_velocity.cross(c - next_obj.pose.position);
        slave_finger(model, next_js, f, c, cdot);
      }
    obj = next_obj;
    js = next_js;

    const ScoreIncrement inc = score_terms(cuboid, obj.pose, setup.goal, setup.goal.level, setup.score);
    total.add(inc.total());
    pos.add(inc.position);
    ori.add(inc.orientation);
    ++res.steps;

    if (step % setup.record_stride == 0) {
      StepRecord r;
      r.time = t;
      r.joints = js;
      r.object = obj;
      r.tau = tau;
      for (int f = 0; f < kNumFingers; ++f) r.contact_forces.segment<3>(3 * f) = transfer.applied[f].force;
      r.attached = transfer.attached;
      r.score = inc.total();
      res.trace.steps.push_back(r);
    }
  }
  res.score = {total.value(), pos.value(), ori.value()};
  res.final_object = obj;
  return res;
}

// ---------------------------------------------------------------------------
// Trace export. Each line is a comma-separated record tagged by its first field:
//   step,t,q[9],qdot[9],pos[3],quat_wxyz[4],vel[3],omega[3],tau[9],force[9],attached[3],score
//   event,t,name,detail
//   summary,level,goal_x,goal_y,goal_z,goal_yaw,score,score_pos,score_ori,final_pos_err,final_yaw_err,status

inline void append_number(std::string& out, double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

template <class Derived>
void append_vector(std::string& out, const Eigen::MatrixBase<Derived>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out.push_back(',');
    append_number(out, v[i]);
  }
}

inline std::string trace_step_line(const StepRecord& r) {
  std::string s = "step,";
  append_number(s, r.time);
  append_vector(s, r.joints.q);
  append_vector(s, r.joints.qdot);
  append_vector(s, r.object.pose.position);
  const auto& q = r.object.pose.orientation;
  append_vector(s, Eigen::Vector4d(q.w(), q.x(), q.y(), q.z()));
  append_vector(s, r.object.velocity);
  append_vector(s, r.object.angular_velocity);
  append_vector(s, r.tau);
  append_vector(s, r.contact_forces);
  for (bool a : r.attached) s += a ? ",1" : ",0";
  s.push_back(',');
  append_number(s, r.score);
  return s;
}

inline std::string summary_line(const Cuboid& cuboid, const EpisodeResult& res) {
  const GoalSpec& g = res.trace.goal;
  std::string s = "summary,";
  s += std::to_string(res.trace.level);
  append_vector(s, g.position);
  s.push_back(',');
  append_number(s, g.yaw);
  append_vector(s, Vec3(res.score.total, res.score.position, res.score.orientation));
  s.push_back(',');
  append_number(s, (res.final_object.pose.position - g.position).norm());
  s.push_back(',');
  append_number(s, final_yaw_error(cuboid, res.final_object.pose, g));
  s += res.failed ? ",failed" : ",ok";
  return s;
}

inline void write_trace(std::ostream& os, const Cuboid& cuboid, const EpisodeResult& res) {
  for (const auto& r : res.trace.steps) os << trace_step_line(r) << '\n';
  for (const auto& e : res.trace.events) {
    std::string s = "event,";
    append_number(s, e.time);
    s += ',' + e.name + ',' + e.detail;
    os << s << '\n';
  }
  os << summary_line(cuboid, res) << '\n';
}

}  // namespace dexprim
