#pragma once

#include "dexprim/collocation.hpp"
#include "dexprim/controller.hpp"
#include "dexprim/sim.hpp"
#include "dexprim/solver.hpp"

#include <deque>
#include <functional>
#include <variant>

namespace dexprim {

/// Object weights with a heavier force term, so planned motions stay within the
/// fingers' torque budget.
inline TrajOptWeights planner_object_weights() {
  TrajOptWeights w = TrajOptWeights::object();
  w.R = MatX::Identity(9, 9);
  return w;
}

struct PlannerConfig {
  double yaw_threshold = 10.0 * kPi / 180.0;
  double turn_increment = kPi / 4.0;
  bool yaw_symmetry = true;  // yaw error taken modulo the cuboid's half-turn symmetry
  int max_retries = 3;
  double standoff = 0.04;
  double grasp_spread = 0.02;
  double axis_clearance = 0.03;  // keep contacts this far from each finger's base axis
  double r_arena = 0.195;
  double resting_tolerance = 2e-3;
  double settle_time = 0.5;
  double pinch_normal_force = 1.0;

  int finger_knots = 10;
  double finger_dt = 0.2;
  int turn_knots = 15;
  double turn_dt = 0.1;
  int reposition_knots = 20;
  double reposition_dt = 0.1;

  TrajOptWeights finger_weights = TrajOptWeights::fingertip();
  TrajOptWeights object_weights = planner_object_weights();
  bool friction_cones = false;
  int cone_sides = 4;
  bool equilibrium_force_target = true;  // R term centred on the start-pose equilibrium
  bool terminal_rest = true;
  SolverConfig solver;
  double accept_violation = 1e-4;

  void validate() const {
    if (!(yaw_threshold >= 0.0)) throw InvalidInput("PlannerConfig: yaw_threshold must be >= 0");
    if (!(turn_increment > 0.0 && turn_increment <= kPi / 4.0 + 1e-9))
      throw InvalidInput("PlannerConfig: turn_increment must lie in (0, pi/4]");
    if (max_retries < 0) throw InvalidInput("PlannerConfig: max_retries must be >= 0");
    if (!(standoff > 0.0)) throw InvalidInput("PlannerConfig: standoff must be positive");
    if (!(axis_clearance >= 0.0)) throw InvalidInput("PlannerConfig: axis_clearance must be >= 0");
    if (!(r_arena > 0.0)) throw InvalidInput("PlannerConfig: r_arena must be positive");
    if (!(settle_time >= 0.0)) throw InvalidInput("PlannerConfig: settle_time must be >= 0");
    if (!(resting_tolerance >= 0.0)) throw InvalidInput("PlannerConfig: resting_tolerance must be >= 0");
    if (finger_knots < 1 || turn_knots < 1 || reposition_knots < 1)
      throw InvalidInput("PlannerConfig: knot counts must be >= 1");
    if (!(finger_dt > 0.0 && turn_dt > 0.0 && reposition_dt > 0.0))
      throw InvalidInput("PlannerConfig: knot spacings must be positive");
    finger_weights.validate(9, 9);
    object_weights.validate(6, 9);
    solver.validate();
  }
};

// ---------------------------------------------------------------------------
// State machine.

enum class GraspStage { lower, pinch };

inline const char* to_string(GraspStage s) { return s == GraspStage::lower ? "lower" : "pinch"; }

namespace primitive {
struct Idle {};
struct Grasp {
  GraspStage stage = GraspStage::lower;
};
struct Turn {
  double delta_yaw = 0.0;
};
struct Reposition {};
struct Done {};
}  // namespace primitive

using PrimitiveKind =
    std::variant<primitive::Idle, primitive::Grasp, primitive::Turn, primitive::Reposition, primitive::Done>;

inline std::string describe(const PrimitiveKind& k) {
  return std::visit(overloaded{
                        [](const primitive::Idle&) -> std::string { return "idle"; },
                        [](const primitive::Grasp& g) -> std::string {
                          return std::string("grasp_") + to_string(g.stage);
                        },
                        [](const primitive::Turn& t) -> std::string {
                          std::string s = "turn ";
                          append_number(s, t.delta_yaw);
                          return s;
                        },
                        [](const primitive::Reposition&) -> std::string { return "reposition"; },
                        [](const primitive::Done&) -> std::string { return "done"; },
                    },
                    k);
}

struct MachineState {
  PrimitiveKind current = primitive::Idle{};
  bool grasped = false;
  std::vector<double> remaining_turns;
  int retry_count = 0;
  int activations = 0;  // primitives emitted so far
  double last_yaw_error = 0.0;  // yaw error when the last turn was chosen
};

/// Wraps to (-pi, pi] and splits into pieces of at most `increment`, full pieces first.
inline std::vector<double> decompose_rotation(double delta_yaw, double increment = kPi / 4.0) {
  if (!(increment > 0.0) || !std::isfinite(increment))
    throw InvalidInput("decompose_rotation: increment must be positive");
  if (!std::isfinite(delta_yaw)) throw InvalidInput("decompose_rotation: delta_yaw must be finite");
  const double d = wrap_angle(delta_yaw);
  std::vector<double> out;
  if (d == 0.0) return out;
  const int n = static_cast<int>(std::ceil(std::abs(d) / increment - 1e-9));
  const double sign = d > 0.0 ? 1.0 : -1.0;
  for (int i = 0; i + 1 < n; ++i) out.push_back(sign * increment);
  out.push_back(d - (n - 1) * sign * increment);
  return out;
}

/// Signed yaw change that takes the object heading to the goal yaw.
inline double yaw_error(const Cuboid& cuboid, const ObjectPose& pose, double goal_yaw, bool symmetric) {
  const double e = wrap_angle(goal_yaw - heading_yaw(cuboid, pose));
  return symmetric ? wrap_half_turn(e) : e;
}

/// Called when `state.current` has finished; returns the state with the next primitive.
inline MachineState next_primitive(MachineState state, const Cuboid& cuboid, const ObjectPose& pose,
                                   const GoalSpec& goal, const PlannerConfig& config) {
  goal.validate();
  auto emit = [&](PrimitiveKind k) {
    state.current = k;
    ++state.activations;
    return state;
  };
  auto choose_when_grasped = [&]() {
    if (!state.grasped) return emit(primitive::Grasp{GraspStage::lower});
    state.remaining_turns.clear();
    if (goal.level == 4 && state.retry_count <= config.max_retries) {
      const double err = yaw_error(cuboid, pose, goal.yaw, config.yaw_symmetry);
      if (std::abs(err) > config.yaw_threshold) {
        std::vector<double> pieces = decompose_rotation(err, config.turn_increment);
        state.last_yaw_error = err;
        const double first = pieces.front();
        state.remaining_turns.assign(pieces.begin() + 1, pieces.end());
        return emit(primitive::Turn{first});
      }
    }
    return emit(primitive::Reposition{});
  };

  return std::visit(
      overloaded{
          [&](const primitive::Idle&) { return emit(primitive::Grasp{GraspStage::lower}); },
          [&](const primitive::Grasp& g) {
            if (g.stage == GraspStage::lower) return emit(primitive::Grasp{GraspStage::pinch});
            state.grasped = true;
            return choose_when_grasped();
          },
          [&](const primitive::Turn& t) {
            // The turn ends with a release; judge its progress before re-grasping.
            state.grasped = false;
            const double err = yaw_error(cuboid, pose, goal.yaw, config.yaw_symmetry);
            const double progress = std::abs(state.last_yaw_error) - std::abs(err);
            if (progress < 0.25 * std::abs(t.delta_yaw))
              ++state.retry_count;
            else
              state.retry_count = 0;
            return emit(primitive::Grasp{GraspStage::lower});
          },
          [&](const primitive::Reposition&) { return emit(primitive::Done{}); },
          [&](const primitive::Done&) { return state; },
      },
      state.current);
}

// ---------------------------------------------------------------------------
// Primitive planning.

/// Horizontal distance from `p` to the vertical axis of a finger's base yaw joint.
inline double axis_clearance(const RobotModel& model, int finger, const Vec3& p) {
  return (p - model.fingers[finger].base_pose.translation()).head<2>().norm();
}

/// Default pinch or its mirror under every finger assignment. A contact that comes
/// within `clearance` of its finger's base axis between `pose` and `target`, or along
/// its approach from `standoff` out along the normal, is penalised, since the yaw
/// joint cannot follow a fingertip passing its own axis. Among the rest the least total
/// fingertip travel wins.
inline GraspSpec choose_grasp(const RobotModel& model, const Vec9& q, const Cuboid& cuboid,
                              const ObjectPose& pose, double spread, const ObjectPose* target = nullptr,
                              double clearance = 0.0, double standoff = 0.0) {
  const Vec9 x = forward_kinematics(model, q);
  constexpr int kPathSamples = 8;
  auto score = [&](const GraspSpec& g) {
    double d = 0.0, shortfall = 0.0;
    for (int f = 0; f < kNumFingers; ++f) {
      const ContactPoint& cp = g.for_finger(f);
      d += (tip(x, f) - contact_world_position(pose, cp)).norm();
      for (int k = 1; k <= kPathSamples; ++k) {
        const double s = standoff * k / kPathSamples;
        const Vec3 approach = contact_world_position(pose, cp) - s * (pose.orientation * cp.normal_body());
        shortfall = std::max(shortfall, clearance - axis_clearance(model, f, approach));
      }
      for (int k = 0; k <= (target ? kPathSamples : 0); ++k) {
        ObjectPose at = pose;
        if (target) {
          const double s = static_cast<double>(k) / kPathSamples;
          at.position = (1.0 - s) * pose.position + s * target->position;
          at.orientation = pose.orientation.slerp(s, target->orientation);
        }
        shortfall = std::max(shortfall, clearance - axis_clearance(model, f, contact_world_position(at, cp)));
      }
    }
    return d + 100.0 * shortfall;
  };
  const GraspSpec base = default_pinch_grasp(cuboid, spread);
  GraspSpec best = assign_faces(model, q, pose, base);
  double best_score = score(best);
  for (const GraspSpec& layout : {base, mirrored_grasp(cuboid, base)}) {
    std::array<int, 3> perm{0, 1, 2};
    do {
      GraspSpec g = layout;
      g.finger_assignment = perm;
      if (const double v = score(g); v < best_score - 1e-12) {
        best = g;
        best_score = v;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return best;
}

inline void accept_solve(const SolveResult& r, const PlannerConfig& config, const std::string& stage) {
  if (r.status == SolveStatus::infeasible_detected)
    throw SolverFailure(stage + ": solver detected infeasibility");
  if (!(r.max_violation <= config.accept_violation))
    throw SolverFailure(stage + ": constraint violation too large");
}

inline SolveResult solve_tagged(const NlpProblem& p, const VecX& z0, const PlannerConfig& config,
                                const std::string& stage) {
  try {
    SolveResult r = solve(p, z0, config.solver);
    accept_solve(r, config, stage);
    return r;
  } catch (const NumericFailure& e) {
    throw SolverFailure(stage + ": " + e.what());
  }
}

struct FingerPlan {
  TrajectorySolution solution;
  FingertipTrajectory reference;
  SolveResult result;
  Vec9 goal = Vec9::Zero();
};

/// Fingertip goals for a grasp stage: contact points, or standoff points displaced
/// outward along each face normal for the lower stage.
inline Vec9 grasp_goals(const ObjectPose& pose, const GraspSpec& grasp, GraspStage stage, double standoff) {
  Vec9 x;
  for (int f = 0; f < kNumFingers; ++f) {
    const ContactPoint& cp = grasp.for_finger(f);
    Vec3 p = contact_world_position(pose, cp);
    if (stage == GraspStage::lower) p -= standoff * (pose.orientation * cp.normal_body());
    x.segment<3>(3 * f) = p;
  }
  return x;
}

/// Forces that squeeze the object with no net wrench.
inline Vec9 squeeze_forces(const ObjectPose& pose, const GraspSpec& grasp, double normal) {
  const Vec9 cf = contact_forces_for_wrench(pose, grasp, Vec6::Zero(), normal_force_target(normal));
  return contact_to_world_forces(pose, grasp, cf);
}

/// Base yaw that points a finger at a target, or away from it when reaching back
/// through the base axis leaves more travel before the joint limits.
inline double preferred_yaw(const FingerChain& chain, const Vec3& target) {
  const Vec3 local = chain.base_pose.inverse() * target;
  const double facing = std::atan2(local.y(), local.x());
  const double lo = chain.joint_lower[0], hi = chain.joint_upper[0];
  auto margin = [&](double y) { return std::min(y - lo, hi - y); };
  const double behind = wrap_angle(facing + kPi);
  return margin(facing) >= margin(behind) ? facing : behind;
}

/// Whether a yaw lies on the other side of the base axis from the one preferred for target.
inline bool misbranched(const FingerChain& chain, const Vec3& target, double yaw) {
  return std::cos(yaw - preferred_yaw(chain, target)) < 0.0;
}

inline int misbranched_fingers(const RobotModel& model, const Vec9& x_goal, const Vec9& q) {
  int n = 0;
  for (int f = 0; f < kNumFingers; ++f)
    n += misbranched(model.fingers[f], x_goal.segment<3>(3 * f), q[3 * f]) ? 1 : 0;
  return n;
}

/// Hold warm start with each finger instead interpolated towards an IK solution started
/// from its preferred yaw.
inline VecX preferred_warm_start(const RobotModel& model, const Vec9& q0, const Vec9& x_goal,
                                 const KnotGrid& grid) {
  Vec9 q1 = q0;
  for (int f = 0; f < kNumFingers; ++f) {
    const FingerChain& chain = model.fingers[f];
    const Vec3 target = x_goal.segment<3>(3 * f);
    // Pitches that put the tip about 8 cm in front of the axis, so the IK does not
    // flip the yaw through the axis singularity.
    const Vec3 seed{preferred_yaw(chain, target), 0.5, -1.8};
    q1.segment<3>(3 * f) = finger_ik(chain, seed, target, 50);
  }
  VecX z = fingertip_warm_start(model, q0, x_goal, grid);
  for (int k = 0; k <= grid.T; ++k) {
    const double a = static_cast<double>(k) / grid.T;
    z.segment<9>(9 * k) = (1.0 - a) * q0 + a * q1;
  }
  return z;
}

inline FingerPlan plan_fingers(const RobotModel& model, const Vec9& q, const Vec9& x_goal, double t0,
                               const PlannerConfig& config, const std::string& stage) {
  FingerPlan out;
  out.goal = x_goal;
  const KnotGrid grid = KnotGrid::uniform(config.finger_knots, config.finger_dt, t0);
  const NlpProblem p = transcribe_fingertip(model, q, x_goal, grid, config.finger_weights, config.r_arena);
  out.result = solve_tagged(p, fingertip_warm_start(model, q, x_goal, grid), config, stage);
  out.solution = extract_fingertip_solution(model, grid, out.result.z);
  // The hold warm start can carry a finger onto the branch that reaches through its
  // base axis towards a yaw limit, leaving no travel for the object motion that follows.
  // Summed tracking error favours that branch from the home pose, so such fingers are
  // re-seeded with their final yaw boxed to the preferred side. A finger that started
  // on that branch is left alone.
  auto flipped = [&](const Vec9& q_end, int f) {
    const Vec3 target = x_goal.segment<3>(3 * f);
    return misbranched(model.fingers[f], target, q_end[3 * f]) && !misbranched(model.fingers[f], target, q[3 * f]);
  };
  std::array<bool, kNumFingers> flip{};
  int wrong = 0;
  for (int f = 0; f < kNumFingers; ++f) wrong += (flip[f] = flipped(out.solution.state.back(), f)) ? 1 : 0;
  if (wrong > 0) {
    NlpProblem boxed = p;
    const int last = 9 * grid.T;
    for (int f = 0; f < kNumFingers; ++f) {
      if (!flip[f]) continue;
      const double yaw = preferred_yaw(model.fingers[f], x_goal.segment<3>(3 * f));
      boxed.lower[last + 3 * f] = std::max(p.lower[last + 3 * f], yaw - kPi / 2.0);
      boxed.upper[last + 3 * f] = std::min(p.upper[last + 3 * f], yaw + kPi / 2.0);
    }
    try {
      SolveResult retry = solve_tagged(boxed, preferred_warm_start(model, q, x_goal, grid), config, stage);
      TrajectorySolution s = extract_fingertip_solution(model, grid, retry.z);
      int still = 0;
      for (int f = 0; f < kNumFingers; ++f) still += (flip[f] && flipped(s.state.back(), f)) ? 1 : 0;
      if (still < wrong) {
        out.result = std::move(retry);
        out.solution = std::move(s);
      }
    } catch (const SolverFailure&) {
    }
  }
  out.reference = fingertip_trajectory(out.solution);
  return out;
}

inline FingerPlan plan_grasp(const RobotModel& model, const Vec9& q, const ObjectPose& pose,
                             const GraspSpec& grasp, GraspStage stage, const PlannerConfig& config,
                             double t0 = 0.0) {
  FingerPlan out = plan_fingers(model, q, grasp_goals(pose, grasp, stage, config.standoff), t0, config,
                                std::string("grasp_") + to_string(stage));
  if (stage == GraspStage::pinch) {
    const Vec9 squeeze = squeeze_forces(pose, grasp, config.pinch_normal_force);
    const int T = out.reference.grid.T;
    for (int k = 0; k <= T; ++k) out.reference.force[k] = (static_cast<double>(k) / T) * squeeze;
  }
  return out;
}

struct ObjectPlan {
  TrajectorySolution solution;
  FingertipTrajectory reference;
  SolveResult result;
  Mat3 reference_rotation = Mat3::Identity();
  ObjectPose goal;
};

inline ObjectTranscriptionOptions object_options(const PlannerConfig& config, const Mat3& reference,
                                                 const Vec3& gravity, double friction) {
  ObjectTranscriptionOptions opt;
  opt.reference_rotation = reference;
  opt.gravity = gravity;
  opt.friction_cones = config.friction_cones;
  opt.friction = friction;
  opt.cone_sides = config.cone_sides;
  opt.terminal_rest = config.terminal_rest;
  return opt;
}

/// Object trajectory from `pose` to goal position `p_goal` with a yaw change, with pose
/// angles measured relative to the current orientation.
inline ObjectPlan plan_object(const Cuboid& cuboid, const GraspSpec& grasp, const ObjectPose& pose,
                              const Vec3& p_goal, double delta_yaw, const KnotGrid& grid,
                              const PlannerConfig& config, const Vec3& gravity, const std::string& stage) {
  ObjectPlan out;
  out.reference_rotation = pose.rotation();
  ObjectTranscriptionOptions opt = object_options(config, out.reference_rotation, gravity, cuboid.friction);
  if (config.equilibrium_force_target)
    opt.lambda_target = equilibrium_contact_forces(cuboid, pose, grasp, gravity,
                                                   normal_force_target(config.object_weights.lambda_target_normal));
  Vec6 o0, og;
  o0 << pose.position, Vec3::Zero();
  og << p_goal, 0.0, 0.0, delta_yaw;
  out.goal = object_pose(og, out.reference_rotation);
  const NlpProblem p = transcribe_object(cuboid, grasp, o0, og, grid, config.object_weights, opt);
  out.result = solve_tagged(p, object_warm_start(cuboid, grasp, o0, og, grid, config.object_weights, opt),
                            config, stage);
  out.solution = extract_object_solution(grid, out.result.z);
  out.reference = fingertips_from_object_solution(grasp, out.solution, out.reference_rotation);
  return out;
}

inline bool is_resting(const Cuboid& cuboid, const ObjectPose& pose, double tol) {
  const Vec3 up = pose.orientation.conjugate() * Vec3::UnitZ();
  return std::abs(pose.position.z() - cuboid.rest_height()) <= tol &&
         std::abs(std::abs(up[cuboid.vertical_axis()]) - 1.0) <= tol;
}

inline ObjectPlan plan_turn(const Cuboid& cuboid, const GraspSpec& grasp, const ObjectPose& pose,
                            double delta_yaw, const PlannerConfig& config, const Vec3& gravity = {0, 0, -9.81},
                            double t0 = 0.0) {
  if (!(std::abs(delta_yaw) <= kPi / 4.0 + 1e-9)) throw InvalidInput("plan_turn: |delta_yaw| exceeds pi/4");
  if (!is_resting(cuboid, pose, config.resting_tolerance))
    throw PreconditionViolation("plan_turn: object is not resting on the table");
  return plan_object(cuboid, grasp, pose, pose.position, delta_yaw,
                     KnotGrid::uniform(config.turn_knots, config.turn_dt, t0), config, gravity, "turn");
}

inline ObjectPlan plan_reposition(const Cuboid& cuboid, const GraspSpec& grasp, const ObjectPose& pose,
                                  const Vec3& goal_position, const PlannerConfig& config,
                                  const Vec3& gravity = {0, 0, -9.81}, double t0 = 0.0) {
  return plan_object(cuboid, grasp, pose, goal_position, 0.0,
                     KnotGrid::uniform(config.reposition_knots, config.reposition_dt, t0), config, gravity,
                     "reposition");
}

// ---------------------------------------------------------------------------
// Closed-loop planner.

/// Runs the state machine online. Each primitive becomes a queue of segments that
/// are planned when they start, from the measured state; every segment is followed
/// by a settle period holding its final reference.
class PrimitivePlanner : public Planner {
 public:
  PrimitivePlanner(RobotModel model, Cuboid cuboid, GoalSpec goal, PlannerConfig config = {},
                   Vec3 gravity = {0.0, 0.0, -9.81})
      : model_(std::move(model)), cuboid_(std::move(cuboid)), goal_(goal), config_(std::move(config)),
        gravity_(gravity) {
    config_.validate();
    goal_.validate();
  }

  PlannerCommand update(double t, const JointState& js, const ObjectState& object) override {
    for (int guard = 0; guard < 64; ++guard) {
      if (active_ && (t < active_end_ + config_.settle_time || idle_done())) return command(t);
      if (!segments_.empty()) {
        Segment s = std::move(segments_.front());
        segments_.pop_front();
        active_ = s.plan(t, js, object);
        active_end_ = active_->grid.end();
        events_.push_back({t, "segment", s.name});
        continue;
      }
      if (idle_done()) return active_ ? command(t) : PlannerCommand{};
      state_ = next_primitive(state_, cuboid_, object.pose, goal_, config_);
      events_.push_back({t, "primitive", describe(state_.current)});
      enqueue(state_.current);
    }
    throw NumericFailure("PrimitivePlanner: no segment could be scheduled");
  }

  const GraspSpec* grasp() const override { return grasp_ ? &*grasp_ : nullptr; }
  std::vector<TraceEvent> take_events() override { return std::exchange(events_, {}); }
  const MachineState& machine() const { return state_; }

 private:
  struct Segment {
    std::string name;
    std::function<FingertipTrajectory(double, const JointState&, const ObjectState&)> plan;
  };

  bool idle_done() const { return std::holds_alternative<primitive::Done>(state_.current); }

  PlannerCommand command(double t) const {
    PlannerCommand c;
    c.passive = false;
    c.reference = sample_reference(*active_, t);
    return c;
  }

  template <class Plan>
  void note_solve(double t, const std::string& stage, const Plan& plan) {
    std::string d = stage + " status=" + to_string(plan.result.status) + " violation=";
    append_number(d, plan.result.max_violation);
    d += " max_slack=";
    append_number(d, plan.solution.alpha.size() ? plan.solution.alpha.maxCoeff() : 0.0);
    events_.push_back({t, "solve", d});
  }

  void enqueue(const PrimitiveKind& k) {
    std::visit(overloaded{
                   [&](const primitive::Grasp& g) {
                     const GraspStage stage = g.stage;
                     segments_.push_back({describe(k), [this, stage](double t, const JointState& js,
                                                                 const ObjectState& obj) {
                                            if (stage == GraspStage::lower) {
                                              ObjectPose target = obj.pose;
                                              target.position = goal_.position;
                                              grasp_ = choose_grasp(model_, js.q, cuboid_, obj.pose,
                                                                    config_.grasp_spread, &target,
                                                                    config_.axis_clearance, config_.standoff);
                                            }
                                            FingerPlan p =
                                                plan_grasp(model_, js.q, obj.pose, *grasp_, stage, config_, t);
                                            note_solve(t, describe(primitive::Grasp{stage}), p);
                                            return p.reference;
                                          }});
                   },
                   [&](const primitive::Turn& turn) {
                     const double delta = turn.delta_yaw;
                     segments_.push_back(
                         {"turn", [this, delta](double t, const JointState&, const ObjectState& obj) {
                            ObjectPlan p = plan_turn(cuboid_, *grasp_, obj.pose, delta, config_, gravity_, t);
                            note_solve(t, "turn", p);
                            return p.reference;
                          }});
                     segments_.push_back(
                         {"release", [this](double t, const JointState& js, const ObjectState& obj) {
                            const Vec9 goal = grasp_goals(obj.pose, *grasp_, GraspStage::lower, config_.standoff);
                            FingerPlan p = plan_fingers(model_, js.q, goal, t, config_, "release");
                            note_solve(t, "release", p);
                            return p.reference;
                          }});
                   },
                   [&](const primitive::Reposition&) {
                     segments_.push_back(
                         {"reposition", [this](double t, const JointState&, const ObjectState& obj) {
                            ObjectPlan p = plan_reposition(cuboid_, *grasp_, obj.pose, goal_.position, config_,
                                                           gravity_, t);
                            note_solve(t, "reposition", p);
                            return p.reference;
                          }});
                   },
                   [&](const auto&) {},
               },
               k);
  }

  RobotModel model_;
  Cuboid cuboid_;
  GoalSpec goal_;
  PlannerConfig config_;
  Vec3 gravity_;
  MachineState state_;
  std::optional<GraspSpec> grasp_;
  std::deque<Segment> segments_;
  std::optional<FingertipTrajectory> active_;
  double active_end_ = 0.0;
  std::vector<TraceEvent> events_;
};

/// Holds the fingers on fixed contacts with equilibrium feedforward.
class HoldPlanner : public Planner {
 public:
  HoldPlanner(GraspSpec grasp, FingertipReference reference)
      : grasp_(std::move(grasp)), reference_(std::move(reference)) {}

  static HoldPlanner equilibrium(const Cuboid& cuboid, const ObjectPose& pose, const GraspSpec& grasp,
                                 const Vec3& gravity, double normal = 1.0) {
    FingertipReference r;
    for (int f = 0; f < kNumFingers; ++f) r.x.segment<3>(3 * f) = contact_world_position(pose, grasp.for_finger(f));
    const Vec9 cf = equilibrium_contact_forces(cuboid, pose, grasp, gravity, normal_force_target(normal));
    r.force = contact_to_world_forces(pose, grasp, cf);
    return HoldPlanner(grasp, r);
  }

  PlannerCommand update(double, const JointState&, const ObjectState&) override {
    return {false, reference_};
  }
  const GraspSpec* grasp() const override { return &grasp_; }
  const FingertipReference& reference() const { return reference_; }

 private:
  GraspSpec grasp_;
  FingertipReference reference_;
};

/// Joint configuration that places each fingertip on its contact point.
inline Vec9 configuration_at_contacts(const RobotModel& model, const ObjectPose& pose, const GraspSpec& grasp,
                                      const Vec9& q_init) {
  Vec9 q = q_init;
  for (int f = 0; f < kNumFingers; ++f)
    q.segment<3>(3 * f) = finger_ik(model.fingers[f], q_init.segment<3>(3 * f),
                                    contact_world_position(pose, grasp.for_finger(f)));
  return q;
}

}  // namespace dexprim
