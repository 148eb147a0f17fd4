#include "support.hpp"

#include "dexprim/cli.hpp"
#include "dexprim/config.hpp"
#include "dexprim/planner.hpp"
#include "dexprim/sim.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

using namespace dexprim;
using namespace dexprim::test;

namespace {

std::array<AppliedForce, 3> no_forces() { return {}; }

ObjectState airborne(double z) {
  ObjectState s;
  s.pose.position = {0.0, 0.0, z};
  s.pose.orientation = Eigen::Quaterniond(rest_orientation(Cuboid{}, 0.2));
  return s;
}

// Contact forces as applied forces at the world contact points of `pose`.
std::array<AppliedForce, 3> at_contacts(const ObjectPose& pose, const GraspSpec& g, const Vec9& cf) {
  const Vec9 w = contact_to_world_forces(pose, g, cf);
  std::array<AppliedForce, 3> out;
  for (int f = 0; f < 3; ++f) out[f] = {w.segment<3>(3 * f), contact_world_position(pose, g.for_finger(f))};
  return out;
}

class ThrowingPlanner : public Planner {
 public:
  PlannerCommand update(double t, const JointState&, const ObjectState&) override {
    if (t >= 0.5) throw SolverFailure("reposition: constraint violation too large");
    return {};
  }
};

EpisodeSetup short_setup(const GoalSpec& goal, const ObjectPose& pose, double duration) {
  EpisodeSetup s;
  s.goal = goal;
  s.initial_pose = pose;
  s.duration = duration;
  return s;
}

}  // namespace

// ---------------------------------------------------------------- finger integration

TEST(StepFingers, GravityLoadTorqueKeepsVelocity) {
  const RobotModel m = defaults::robot_model();
  JointState js{defaults::home_configuration(), Vec9::Constant(0.3)};
  const JointState next = step_fingers(SimConfig{}, m, js, gravity_compensation(m, js.q));
  EXPECT_LT((next.qdot - js.qdot).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(StepFingers, ConstantTorqueWithoutGravityIsDoubleIntegrator) {
  const RobotModel m = zero_gravity_model();
  SimConfig cfg;
  cfg.dt = 1.0 / 1024;
  cfg.joint_inertia = Vec9::Constant(0.25);
  Vec9 tau = Vec9::Zero();
  tau << 0.5, -0.25, 0.125, 0, 0.5, 0, -0.5, 0.25, 0;
  JointState js{Vec9::Zero(), Vec9::Zero()};
  const int n = 40;
  for (int i = 0; i < n; ++i) js = step_fingers(cfg, m, js, tau);
  const Vec9 expected = n * cfg.dt * tau / 0.25;
  EXPECT_EQ(js.qdot, expected);
}

TEST(StepFingers, LimitPinsAngleAndZeroesVelocity) {
  const RobotModel m = zero_gravity_model();
  JointState js{Vec9::Zero(), Vec9::Zero()};
  js.q[4] = m.joint_upper()[4] - 1e-4;
  js.qdot[4] = 5.0;
  const JointState next = step_fingers(SimConfig{}, m, js, Vec9::Zero());
  EXPECT_EQ(next.q[4], m.joint_upper()[4]);
  EXPECT_EQ(next.qdot[4], 0.0);
}

TEST(StepFingers, VelocityClamped) {
  const RobotModel m = zero_gravity_model();
  JointState js{Vec9::Zero(), Vec9::Constant(9.99)};
  const JointState next = step_fingers(SimConfig{}, m, js, Vec9::Constant(10.0));
  EXPECT_LE(next.qdot.maxCoeff(), 10.0);
}

// ---------------------------------------------------------------- object integration

TEST(StepObject, FreeFallMatchesBallistic) {
  const Cuboid c;
  const SimConfig cfg;
  ObjectState s = airborne(0.5);
  for (int i = 0; i < 100; ++i) s = step_object(cfg, c, s, no_forces());
  EXPECT_NEAR(s.pose.position.z(), 0.5 - 0.5 * 9.81 * 0.01, 1e-4);
  EXPECT_NEAR(s.velocity.z(), -9.81 * 0.1, 1e-9);
}

TEST(StepObject, EquilibriumForcesHoldPose) {
  const Cuboid c;
  const SimConfig cfg;
  const GraspSpec g = default_pinch_grasp(c, 0.02);
  ObjectState s = airborne(0.06);
  const Vec3 start = s.pose.position;
  const Vec9 cf = equilibrium_contact_forces(c, s.pose, g, cfg.gravity, normal_force_target(1.0));
  for (int i = 0; i < 1000; ++i) s = step_object(cfg, c, s, at_contacts(s.pose, g, cf));
  EXPECT_LT((s.pose.position - start).norm(), 1e-6);
}

TEST(StepObject, FrictionlessSpinFollowsClosedForm) {
  const Cuboid c;
  SimConfig cfg;
  cfg.table_friction = 0.0;
  ObjectState s;
  s.pose = resting_pose(c, Vec3::Zero(), 0.0);
  const double f = 0.05, arm = 0.01;
  const double tau_z = 2 * arm * f;
  const double izz = (s.pose.rotation() * c.inertia * s.pose.rotation().transpose())(2, 2);
  const int n = 300;
  for (int i = 0; i < n; ++i) {
    const Mat3 r = s.pose.rotation();
    const Vec3 along = r.col(c.long_axis()), across = r.col(c.pinch_axis());
    std::array<AppliedForce, 3> forces;
    forces[0] = {f * across, s.pose.position + arm * along};
    forces[1] = {-f * across, s.pose.position - arm * along};
    s = step_object(cfg, c, s, forces);
  }
  EXPECT_NEAR(s.angular_velocity.z(), tau_z * n * cfg.dt / izz, 1e-6);
  EXPECT_LT(s.pose.position.norm() - c.rest_height(), 1e-9);
}

TEST(StepObject, RestingObjectStaysPut) {
  const Cuboid c;
  ObjectState s;
  s.pose = resting_pose(c, Vec3(0.02, -0.01, 0.0), 0.7);
  const ObjectState start = s;
  for (int i = 0; i < 500; ++i) s = step_object(SimConfig{}, c, s, no_forces());
  EXPECT_EQ(s.pose.position, start.pose.position);
  EXPECT_EQ(s.pose.orientation.coeffs(), start.pose.orientation.coeffs());
}

TEST(StepObject, TableDoesNotInjectEnergy) {
  auto gen = rng(201);
  const Cuboid c;
  const SimConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    ObjectState s;
    s.pose = resting_pose(c, uniform_vec<3>(gen, -0.05, 0.05), uniform(gen, -kPi, kPi));
    s.velocity = {uniform(gen, -0.2, 0.2), uniform(gen, -0.2, 0.2), 0.0};
    s.angular_velocity = {0.0, 0.0, uniform(gen, -3, 3)};
    // A load through the CoM that presses on the table plus a horizontal couple, so
    // the object stays resting.
    const Vec3 push(uniform(gen, -0.3, 0.3), uniform(gen, -0.3, 0.3), uniform(gen, -1, 0));
    const double couple = uniform(gen, -0.5, 0.5), arm = 0.03;
    for (int i = 0; i < 200; ++i) {
      const Vec3 along = s.pose.rotation().col(c.long_axis()), across = s.pose.rotation().col(c.pinch_axis());
      std::array<AppliedForce, 3> forces;
      forces[0] = {push, s.pose.position};
      forces[1] = {couple * across, s.pose.position + arm * along};
      forces[2] = {-couple * across, s.pose.position - arm * along};
      Vec3 torque = Vec3::Zero();
      for (const auto& a : forces) torque += (a.point - s.pose.position).cross(a.force);
      const ObjectState next = step_object(cfg, c, s, forces);
      const Eigen::AngleAxisd turn(next.pose.orientation * s.pose.orientation.conjugate());
      const double work = (push + c.mass * cfg.gravity).dot(next.pose.position - s.pose.position) +
                          torque.dot(turn.angle() * turn.axis());
      EXPECT_LE(kinetic_energy(c, next) - kinetic_energy(c, s), work + 1e-9);
      EXPECT_EQ(next.pose.position.z(), s.pose.position.z());
      s = next;
    }
  }
}

TEST(StepObject, FreeFlightEnergyMatchesWork) {
  auto gen = rng(202);
  const Cuboid c;
  const SimConfig cfg;
  ObjectState s = airborne(0.3);
  s.velocity = uniform_vec<3>(gen, -0.5, 0.5);
  std::array<AppliedForce, 3> forces;
  forces[0] = {uniform_vec<3>(gen, -1, 1), s.pose.position};
  for (int i = 0; i < 50; ++i) {
    forces[0].point = s.pose.position;
    const ObjectState next = step_object(cfg, c, s, forces);
    const double work = (forces[0].force + c.mass * cfg.gravity).dot(next.pose.position - s.pose.position);
    EXPECT_LE(kinetic_energy(c, next) - kinetic_energy(c, s), work + 1e-9);
    s = next;
  }
}

TEST(StepObject, QuaternionStaysUnit) {
  auto gen = rng(203);
  const Cuboid c;
  ObjectState s = airborne(1.0);
  s.angular_velocity = uniform_vec<3>(gen, -20, 20);
  for (int i = 0; i < 1000; ++i) s = step_object(SimConfig{}, c, s, no_forces());
  EXPECT_NEAR(s.pose.orientation.norm(), 1.0, 1e-9);
}

// ---------------------------------------------------------------- contact transfer

namespace {

struct GraspedScene {
  RobotModel model = defaults::robot_model();
  Cuboid cuboid;
  ObjectPose pose = resting_pose(Cuboid{}, Vec3(0.01, 0.0, 0.0), 0.3);
  GraspSpec grasp;
  Vec9 q;
  Vec9 inward;

  GraspedScene() {
    grasp = choose_grasp(model, defaults::home_configuration(), cuboid, pose, 0.02);
    q = configuration_at_contacts(model, pose, grasp, defaults::home_configuration());
    inward = squeeze_forces(pose, grasp, 1.0);
  }
};

}  // namespace

TEST(ContactTransfer, FingertipsAtContactsTransferFully) {
  GraspedScene s;
  const ContactTransfer t = contact_force_transfer(SimConfig{}, s.model, s.q, s.pose, &s.grasp, s.inward);
  for (int f = 0; f < 3; ++f) {
    EXPECT_TRUE(t.attached[f]);
    EXPECT_EQ(t.applied[f].force, s.inward.segment<3>(3 * f));
    EXPECT_LT((t.applied[f].point - contact_world_position(s.pose, s.grasp.for_finger(f))).norm(), 1e-15);
  }
}

TEST(ContactTransfer, DistantFingerTransfersNothing) {
  GraspedScene s;
  Vec9 q = s.q;
  const Vec3 away = contact_world_position(s.pose, s.grasp.for_finger(1)) -
                    0.05 * (s.pose.orientation * s.grasp.for_finger(1).normal_body());
  q.segment<3>(3) = finger_ik(s.model.fingers[1], q.segment<3>(3), away, 200, 1e-12);
  const ContactTransfer t = contact_force_transfer(SimConfig{}, s.model, q, s.pose, &s.grasp, s.inward);
  EXPECT_TRUE(t.attached[0]);
  EXPECT_FALSE(t.attached[1]);
  EXPECT_TRUE(t.attached[2]);
  EXPECT_EQ(t.applied[1].force.norm(), 0.0);
}

TEST(ContactTransfer, PullingFingerDoesNotTransfer) {
  GraspedScene s;
  const ContactTransfer t = contact_force_transfer(SimConfig{}, s.model, s.q, s.pose, &s.grasp, -s.inward);
  for (int f = 0; f < 3; ++f) EXPECT_FALSE(t.attached[f]);
}

TEST(ContactTransfer, DetachedObjectFeelsOnlyGravity) {
  GraspedScene s;
  const ContactTransfer none =
      contact_force_transfer(SimConfig{}, s.model, defaults::home_configuration(), s.pose, &s.grasp, s.inward);
  const ContactTransfer ungrasped = contact_force_transfer(SimConfig{}, s.model, s.q, s.pose, nullptr, s.inward);
  ObjectState o = airborne(0.1);
  const ObjectState free = step_object(SimConfig{}, s.cuboid, o, no_forces());
  for (const auto& t : {none, ungrasped}) {
    for (int f = 0; f < 3; ++f) EXPECT_FALSE(t.attached[f]);
    const ObjectState a = step_object(SimConfig{}, s.cuboid, o, t.applied);
    EXPECT_EQ(a.velocity, free.velocity);
    EXPECT_EQ(a.angular_velocity, free.angular_velocity);
  }
}

// ---------------------------------------------------------------- scoring

TEST(Score, Examples) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3(0.03, 0.01, 0.0), 0.4);
  GoalSpec goal{pose.position, 0.4, 1};
  EXPECT_EQ(compute_score_step(c, pose, goal, 1), 0.0);
  goal.position.x() += 0.01;
  EXPECT_NEAR(compute_score_step(c, pose, goal, 1), -0.01, 1e-15);
  GoalSpec turned{pose.position, wrap_angle(0.4 + kPi / 2), 4};
  EXPECT_NEAR(compute_score_step(c, pose, turned, 4), -0.1 * kPi / 2, 1e-12);
  EXPECT_NEAR(compute_score_step(c, pose, turned, 4), -0.15708, 1e-5);
}

TEST(Score, InvalidLevelRejected) {
  EXPECT_THROW(compute_score_step(Cuboid{}, ObjectPose{}, GoalSpec{}, 0), InvalidInput);
  EXPECT_THROW(compute_score_step(Cuboid{}, ObjectPose{}, GoalSpec{}, 5), InvalidInput);
}

TEST(Score, NeverPositive) {
  auto gen = rng(211);
  const Cuboid c;
  for (int trial = 0; trial < 200; ++trial) {
    ObjectPose pose;
    pose.position = uniform_vec<3>(gen, -0.2, 0.2);
    pose.orientation = Eigen::Quaterniond(random_rotation(gen));
    const GoalSpec g{uniform_vec<3>(gen, -0.2, 0.2), uniform(gen, -3.1, 3.1), 1 + trial % 4};
    EXPECT_LE(compute_score_step(c, pose, g, g.level), 0.0);
  }
}

TEST(GoalSpec, ValidatesLevelAndYaw) {
  EXPECT_THROW((GoalSpec{Vec3::Zero(), 0.0, 5}.validate()), InvalidInput);
  EXPECT_THROW((GoalSpec{Vec3::Zero(), -kPi, 4}.validate()), InvalidInput);
  EXPECT_NO_THROW((GoalSpec{Vec3::Zero(), kPi, 4}.validate()));
}

// ---------------------------------------------------------------- episodes

TEST(Episode, NoOpAtGoalScoresZero) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3(0.02, 0.01, 0.0), 0.1);
  NoOpPlanner p;
  const EpisodeResult r =
      run_episode(defaults::robot_model(), c, short_setup({pose.position, 0.1, 4}, pose, 2.0), p);
  EXPECT_EQ(r.score.total, 0.0);
  EXPECT_FALSE(r.failed);
}

TEST(Episode, NoOpConstantErrorAccumulates) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3::Zero(), 0.0);
  NoOpPlanner p;
  const GoalSpec goal{pose.position + Vec3(0.1, 0.0, 0.0), 0.0, 1};
  const EpisodeResult r = run_episode(defaults::robot_model(), c, short_setup(goal, pose, 10.0), p);
  EXPECT_EQ(r.steps, 10000);
  EXPECT_NEAR(r.score.total, -1000.0, 1e-9);
}

TEST(Episode, TraceShapeAndScoreSum) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3(0.01, 0.0, 0.0), 0.0);
  HoldPlanner hold = HoldPlanner::equilibrium(c, pose, default_pinch_grasp(c, 0.02), Vec3(0, 0, -9.81));
  EpisodeSetup s = short_setup({Vec3(0.05, 0.05, 0.05), 0.3, 4}, pose, 1.5);
  s.initial_q = configuration_at_contacts(defaults::robot_model(), pose, *hold.grasp(), defaults::home_configuration());
  const EpisodeResult r = run_episode(defaults::robot_model(), c, s, hold);
  ASSERT_EQ(r.trace.steps.size(), 1500u);
  double sum = 0.0;
  for (size_t i = 0; i < r.trace.steps.size(); ++i) {
    EXPECT_NEAR(r.trace.steps[i].time, i * 1e-3, 1e-12);
    sum += r.trace.steps[i].score;
  }
  EXPECT_NEAR(r.score.total, sum, 1e-9);
  EXPECT_NEAR(r.score.total, r.score.position + r.score.orientation, 1e-9);
}

TEST(Episode, RecordStrideThinsTrace) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3::Zero(), 0.0);
  NoOpPlanner p;
  EpisodeSetup s = short_setup({pose.position, 0.0, 1}, pose, 1.0);
  s.record_stride = 10;
  EXPECT_EQ(run_episode(defaults::robot_model(), c, s, p).trace.steps.size(), 100u);
}

TEST(Episode, PlannerFailureMarksEpisodeWithPartialTrace) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3::Zero(), 0.0);
  ThrowingPlanner p;
  const EpisodeResult r = run_episode(defaults::robot_model(), c, short_setup({pose.position, 0.0, 1}, pose, 2.0), p);
  EXPECT_TRUE(r.failed);
  EXPECT_NE(r.failure.find("reposition"), std::string::npos);
  EXPECT_EQ(r.trace.steps.size(), 500u);
  ASSERT_FALSE(r.trace.events.empty());
  EXPECT_EQ(r.trace.events.back().name, "failure");
}

TEST(Episode, HeldObjectDriftsLittle) {
  const Cuboid c;
  const RobotModel m = defaults::robot_model();
  ObjectPose pose = resting_pose(c, Vec3(0.0, 0.01, 0.0), 0.5);
  pose.position.z() = 0.06;
  const GraspSpec g = choose_grasp(m, defaults::home_configuration(), c, pose, 0.02);
  HoldPlanner hold = HoldPlanner::equilibrium(c, pose, g, Vec3(0, 0, -9.81));
  EpisodeSetup s = short_setup({pose.position, 0.0, 3}, pose, 2.0);
  s.initial_q = configuration_at_contacts(m, pose, g, defaults::home_configuration());
  const EpisodeResult r = run_episode(m, c, s, hold);
  EXPECT_LT((r.final_object.pose.position - pose.position).norm(), 1e-3);
}

TEST(Episode, IdenticalInputsGiveIdenticalTraces) {
  const Cuboid c;
  const RobotModel m = defaults::robot_model();
  const ObjectPose pose = resting_pose(c, Vec3(0.01, -0.02, 0.0), 0.3);
  const GoalSpec goal{Vec3(0.06, 0.02, c.rest_height()), 0.0, 1};
  std::string traces[2];
  for (auto& text : traces) {
    PrimitivePlanner p(m, c, goal);
    EpisodeSetup s = short_setup(goal, pose, 6.0);
    s.record_stride = 7;
    std::ostringstream os;
    write_trace(os, c, run_episode(m, c, s, p));
    text = os.str();
  }
  EXPECT_EQ(traces[0], traces[1]);
  EXPECT_NE(traces[0].find("event,"), std::string::npos);
}

TEST(Episode, PlannerBeatsNoOpOnTenCentimetreGoal) {
  const Cuboid c;
  const RobotModel m = defaults::robot_model();
  const ObjectPose pose = resting_pose(c, Vec3(0.0, -0.02, 0.0), -0.4);
  const GoalSpec goal{Vec3(0.06, 0.06, c.rest_height()), 0.0, 1};
  ASSERT_NEAR((goal.position - pose.position).norm(), 0.1, 1e-12);
  NoOpPlanner noop;
  PrimitivePlanner planner(m, c, goal);
  const EpisodeResult a = run_episode(m, c, short_setup(goal, pose, 20.0), noop);
  const EpisodeResult b = run_episode(m, c, short_setup(goal, pose, 20.0), planner);
  EXPECT_FALSE(b.failed) << b.failure;
  EXPECT_GT(b.score.total, a.score.total);
  EXPECT_LT((b.final_object.pose.position - goal.position).norm(), 0.02);
}

TEST(TraceFormat, StepLineHasDocumentedColumns) {
  StepRecord r;
  const std::string line = trace_step_line(r);
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 1 + 9 + 9 + 3 + 4 + 3 + 3 + 9 + 9 + 3 + 1);
  EXPECT_EQ(line.rfind("step,", 0), 0u);
}

// ---------------------------------------------------------------- state machine

namespace {

std::vector<double> degrees(const std::vector<double>& v) {
  std::vector<double> out;
  for (double x : v) out.push_back(x * 180.0 / kPi);
  return out;
}

void expect_pieces(double input_deg, std::vector<double> expected_deg) {
  const std::vector<double> got = degrees(decompose_rotation(input_deg * kPi / 180.0));
  ASSERT_EQ(got.size(), expected_deg.size());
  for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected_deg[i], 1e-10);
}

PlannerConfig asymmetric() {
  PlannerConfig c;
  c.yaw_symmetry = false;
  return c;
}

template <class T>
bool is(const MachineState& s) {
  return std::holds_alternative<T>(s.current);
}

}  // namespace

TEST(DecomposeRotation, Examples) {
  expect_pieces(120.0, {45.0, 45.0, 30.0});
  expect_pieces(30.0, {30.0});
  expect_pieces(-190.0, {45.0, 45.0, 45.0, 35.0});
  expect_pieces(-90.0, {-45.0, -45.0});
  EXPECT_TRUE(decompose_rotation(0.0).empty());
}

TEST(DecomposeRotation, PiecesBoundedSameSignAndSumToWrappedInput) {
  auto gen = rng(221);
  for (int trial = 0; trial < 1000; ++trial) {
    const double d = uniform(gen, -10, 10), inc = uniform(gen, 0.05, kPi / 4);
    const std::vector<double> p = decompose_rotation(d, inc);
    double sum = 0.0;
    for (double x : p) {
      EXPECT_LE(std::abs(x), inc + 1e-12);
      EXPECT_EQ(std::signbit(x), std::signbit(p.front()));
      sum += x;
    }
    EXPECT_NEAR(sum, wrap_angle(d), 1e-12);
    EXPECT_EQ(p.size(), static_cast<size_t>(std::ceil(std::abs(wrap_angle(d)) / inc - 1e-9)));
  }
}

TEST(DecomposeRotation, RejectsBadIncrement) {
  EXPECT_THROW(decompose_rotation(1.0, 0.0), InvalidInput);
}

TEST(StateMachine, FreshStateGraspsLowerThenPinch) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3::Zero(), 0.0);
  const GoalSpec goal{Vec3(0.05, 0, 0.01), 0.0, 1};
  MachineState s = next_primitive(MachineState{}, c, pose, goal, PlannerConfig{});
  ASSERT_TRUE(is<primitive::Grasp>(s));
  EXPECT_EQ(std::get<primitive::Grasp>(s.current).stage, GraspStage::lower);
  s = next_primitive(s, c, pose, goal, PlannerConfig{});
  ASSERT_TRUE(is<primitive::Grasp>(s));
  EXPECT_EQ(std::get<primitive::Grasp>(s.current).stage, GraspStage::pinch);
  EXPECT_FALSE(s.grasped);
}

TEST(StateMachine, GraspedLevelTwoRepositionsThenDone) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3::Zero(), 1.0);
  const GoalSpec goal{Vec3(0, 0, 0.08), 0.0, 2};
  MachineState s;
  s.current = primitive::Grasp{GraspStage::pinch};
  s = next_primitive(s, c, pose, goal, PlannerConfig{});
  EXPECT_TRUE(s.grasped);
  EXPECT_TRUE(is<primitive::Reposition>(s));
  s = next_primitive(s, c, pose, goal, PlannerConfig{});
  EXPECT_TRUE(is<primitive::Done>(s));
  const int n = s.activations;
  s = next_primitive(s, c, pose, goal, PlannerConfig{});
  EXPECT_TRUE(is<primitive::Done>(s));
  EXPECT_EQ(s.activations, n);
}

TEST(StateMachine, LevelFourTurnsThenRegrasps) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3::Zero(), 0.0);
  const GoalSpec goal{Vec3(0, 0, 0.05), 120.0 * kPi / 180.0, 4};
  MachineState s;
  s.current = primitive::Grasp{GraspStage::pinch};
  s = next_primitive(s, c, pose, goal, asymmetric());
  ASSERT_TRUE(is<primitive::Turn>(s));
  EXPECT_NEAR(std::get<primitive::Turn>(s.current).delta_yaw, kPi / 4, 1e-12);
  ASSERT_EQ(s.remaining_turns.size(), 2u);
  EXPECT_NEAR(s.remaining_turns[1], kPi / 6, 1e-12);
  const ObjectPose turned = resting_pose(c, Vec3::Zero(), kPi / 4);
  s = next_primitive(s, c, turned, goal, asymmetric());
  ASSERT_TRUE(is<primitive::Grasp>(s));
  EXPECT_EQ(std::get<primitive::Grasp>(s.current).stage, GraspStage::lower);
  EXPECT_FALSE(s.grasped);
  EXPECT_EQ(s.retry_count, 0);
}

TEST(StateMachine, SymmetricYawErrorTakesShorterTurn) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3::Zero(), 0.0);
  const GoalSpec goal{Vec3(0, 0, 0.05), 120.0 * kPi / 180.0, 4};
  MachineState s;
  s.current = primitive::Grasp{GraspStage::pinch};
  s = next_primitive(s, c, pose, goal, PlannerConfig{});
  ASSERT_TRUE(is<primitive::Turn>(s));
  EXPECT_NEAR(std::get<primitive::Turn>(s.current).delta_yaw, -kPi / 4, 1e-12);
}

TEST(StateMachine, AlignedYawRepositions) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3::Zero(), 0.1);
  MachineState s;
  s.current = primitive::Grasp{GraspStage::pinch};
  EXPECT_TRUE(is<primitive::Reposition>(next_primitive(s, c, pose, {Vec3(0, 0, 0.05), 0.0, 4}, PlannerConfig{})));
}

TEST(StateMachine, StalledTurnsCountRetriesAndGiveUp) {
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3::Zero(), 0.0);
  const GoalSpec goal{Vec3(0, 0, 0.05), 1.0, 4};
  PlannerConfig cfg = asymmetric();
  cfg.max_retries = 1;
  MachineState s;
  s.current = primitive::Grasp{GraspStage::pinch};
  int turns = 0;
  for (int i = 0; i < 30 && !is<primitive::Done>(s); ++i) {
    if (is<primitive::Grasp>(s) && std::get<primitive::Grasp>(s.current).stage == GraspStage::lower) {
      s = next_primitive(s, c, pose, goal, cfg);
      continue;
    }
    s = next_primitive(s, c, pose, goal, cfg);
    turns += is<primitive::Turn>(s);
  }
  EXPECT_TRUE(is<primitive::Done>(s));
  EXPECT_EQ(turns, 2);
}

TEST(StateMachine, RandomWalkProperties) {
  auto gen = rng(231);
  const Cuboid c;
  const double bound = 2 + 2 * std::ceil(kPi / (kPi / 4)) + 1;
  for (int trial = 0; trial < 300; ++trial) {
    const int level = 1 + trial % 4;
    double yaw = uniform(gen, -kPi, kPi);
    const GoalSpec goal{Vec3(0, 0, 0.05), uniform(gen, -3.1, 3.1), level};
    MachineState s;
    int steps = 0;
    while (!is<primitive::Done>(s) && steps < 100) {
      const bool was_grasped = s.grasped;
      s = next_primitive(s, c, resting_pose(c, Vec3::Zero(), yaw), goal, PlannerConfig{});
      ++steps;
      if (is<primitive::Turn>(s) || is<primitive::Reposition>(s)) {
        EXPECT_TRUE(s.grasped);
        EXPECT_TRUE(was_grasped || s.grasped);
      }
      if (is<primitive::Turn>(s)) {
        EXPECT_EQ(level, 4);
        const double d = std::get<primitive::Turn>(s.current).delta_yaw;
        EXPECT_LE(std::abs(d), kPi / 4 + 1e-9);
        yaw = wrap_angle(yaw + d);  // an ideal turn
      }
    }
    EXPECT_TRUE(is<primitive::Done>(s));
    EXPECT_LE(s.activations, bound);
  }
}

// ---------------------------------------------------------------- primitive planning

namespace {

struct PlanScene {
  RobotModel model = defaults::robot_model();
  Cuboid cuboid;
  ObjectPose pose = resting_pose(Cuboid{}, Vec3(0.01, -0.01, 0.0), 0.2);
  GraspSpec grasp;
  PlannerConfig config;

  PlanScene() { grasp = choose_grasp(model, defaults::home_configuration(), cuboid, pose, config.grasp_spread); }
};

}  // namespace

namespace {

double path_clearance(const RobotModel& m, const GraspSpec& g, const ObjectPose& a, const ObjectPose& b) {
  double worst = 1.0;
  for (int k = 0; k <= 20; ++k) {
    ObjectPose at = a;
    at.position = a.position + (k / 20.0) * (b.position - a.position);
    for (int f = 0; f < 3; ++f) worst = std::min(worst, axis_clearance(m, f, contact_world_position(at, g.for_finger(f))));
  }
  return worst;
}

}  // namespace

TEST(ChooseGrasp, TargetKeepsContactsClearOfBaseAxes) {
  const RobotModel m = defaults::robot_model();
  const Cuboid c;
  const ObjectPose start = resting_pose(c, Vec3(-0.01, -0.03, 0.0), 2.6);
  ObjectPose target = start;
  target.position = {0.066, 0.0, 0.07};  // next to the base axis of finger 0
  const GraspSpec plain = choose_grasp(m, defaults::home_configuration(), c, start, 0.02);
  const GraspSpec aware = choose_grasp(m, defaults::home_configuration(), c, start, 0.02, &target, 0.03);
  EXPECT_LT(path_clearance(m, plain, start, target), 0.01);
  EXPECT_GE(path_clearance(m, aware, start, target), 0.03);
  std::array<int, 3> sorted = aware.finger_assignment;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::array<int, 3>{0, 1, 2}));
}

TEST(ChooseGrasp, WithoutTargetMinimisesTravel) {
  const RobotModel m = defaults::robot_model();
  const Cuboid c;
  const ObjectPose pose = resting_pose(c, Vec3(0.02, 0.01, 0.0), -0.7);
  const Vec9 q = defaults::home_configuration();
  const Vec9 x = forward_kinematics(m, q);
  auto travel = [&](const GraspSpec& g) {
    double d = 0.0;
    for (int f = 0; f < 3; ++f) d += (tip(x, f) - contact_world_position(pose, g.for_finger(f))).norm();
    return d;
  };
  const double chosen = travel(choose_grasp(m, q, c, pose, 0.02));
  const GraspSpec base = default_pinch_grasp(c, 0.02);
  for (const GraspSpec& layout : {base, mirrored_grasp(c, base)}) {
    std::array<int, 3> perm{0, 1, 2};
    do {
      GraspSpec g = layout;
      g.finger_assignment = perm;
      EXPECT_LE(chosen, travel(g) + 1e-12);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

namespace {

/// Start pose and goal of the first episode of a seed-11 batch at `level`.
struct BatchScene {
  Config config;
  GoalSpec goal;
  ObjectPose pose, target;

  explicit BatchScene(int level) {
    RunSpec spec;
    spec.level = level;
    spec.goal_count = 1;
    spec.seed = 11;
    pose = sample_initial_pose(config.cuboid, episode_seed(11, 0, 0), config.episode.initial_radius);
    goal = batch_goals(config, spec)[0];
    target = pose;
    target.position = goal.position;
  }
};

double approach_clearance(const RobotModel& m, const GraspSpec& g, const ObjectPose& pose, double standoff) {
  double worst = 1.0;
  for (int f = 0; f < 3; ++f)
    for (int k = 0; k <= 20; ++k) {
      const ContactPoint& cp = g.for_finger(f);
      const Vec3 p = contact_world_position(pose, cp) - (standoff * k / 20.0) * (pose.orientation * cp.normal_body());
      worst = std::min(worst, axis_clearance(m, f, p));
    }
  return worst;
}

}  // namespace

TEST(ChooseGrasp, ApproachKeepsClearOfBaseAxes) {
  const BatchScene b(3);
  const RobotModel& m = b.config.robot;
  const PlannerConfig& pc = b.config.planner;
  const Vec9 q = defaults::home_configuration();
  const GraspSpec ends = choose_grasp(m, q, b.config.cuboid, b.pose, pc.grasp_spread, &b.target, 0.03);
  const GraspSpec whole =
      choose_grasp(m, q, b.config.cuboid, b.pose, pc.grasp_spread, &b.target, 0.03, pc.standoff);
  EXPECT_LT(approach_clearance(m, ends, b.pose, pc.standoff), 0.03);
  EXPECT_GE(approach_clearance(m, whole, b.pose, pc.standoff), 0.03);
}

TEST(PreferredYaw, FacesTargetUnlessReachingBackLeavesMoreTravel) {
  const FingerChain f0 = defaults::robot_model().fingers[0];  // base x axis points along -x
  EXPECT_NEAR(preferred_yaw(f0, Vec3(0.02, 0.0, 0.1)), 0.0, 1e-12);
  EXPECT_NEAR(preferred_yaw(f0, Vec3(0.08, -0.05, 0.1)), kPi / 2.0, 1e-12);
  EXPECT_NEAR(preferred_yaw(f0, Vec3(0.13, 0.0, 0.1)), 0.0, 1e-12);  // facing would need yaw pi
  EXPECT_NEAR(preferred_yaw(f0, Vec3(0.13, 0.01, 0.1)), std::atan2(0.01, 0.05), 1e-12);
}

TEST(PreferredYaw, PropertiesOnRandomTargets) {
  auto gen = test::rng(41);
  const RobotModel m = defaults::robot_model();
  for (int i = 0; i < 200; ++i) {
    const int f = i % 3;
    const FingerChain& c = m.fingers[f];
    const Vec3 target = c.base_pose.translation() + test::uniform_vec<3>(gen, -0.15, 0.15);
    const Vec3 local = c.base_pose.inverse() * target;
    const double facing = std::atan2(local.y(), local.x());
    const double y = preferred_yaw(c, target);
    EXPECT_NEAR(std::abs(std::sin(y - facing)), 0.0, 1e-9);
    auto margin = [&](double v) { return std::min(v - c.joint_lower[0], c.joint_upper[0] - v); };
    const double other = wrap_angle(y + kPi);
    EXPECT_GE(margin(y), margin(other) - 1e-12);
    EXPECT_GT(margin(y), 0.0);
  }
}

TEST(PlanFingers, ReseedsFingerReachingThroughItsAxis) {
  const BatchScene b(2);
  const RobotModel& m = b.config.robot;
  const PlannerConfig& pc = b.config.planner;
  const Vec9 q = defaults::home_configuration();
  const GraspSpec g =
      choose_grasp(m, q, b.config.cuboid, b.pose, pc.grasp_spread, &b.target, pc.axis_clearance, pc.standoff);
  const Vec9 x = grasp_goals(b.pose, g, GraspStage::lower, pc.standoff);
  const KnotGrid grid = KnotGrid::uniform(pc.finger_knots, pc.finger_dt, 0.0);
  const NlpProblem p = transcribe_fingertip(m, q, x, grid, pc.finger_weights, pc.r_arena);
  const SolveResult hold = solve(p, fingertip_warm_start(m, q, x, grid), pc.solver);
  ASSERT_EQ(misbranched_fingers(m, x, q), 0);
  ASSERT_EQ(misbranched_fingers(m, x, Vec9(extract_fingertip_solution(m, grid, hold.z).state.back())), 1);

  const FingerPlan plan = plan_grasp(m, q, b.pose, g, GraspStage::lower, pc);
  EXPECT_EQ(misbranched_fingers(m, x, Vec9(plan.solution.state.back())), 0);
  EXPECT_LE(plan.result.max_violation, pc.accept_violation);
  EXPECT_LT((plan.solution.fingertips.back() - x).lpNorm<Eigen::Infinity>(), 1e-3);
  EXPECT_EQ(plan.reference.grid.T, grid.T);
}

TEST(Episode, BatchOutliersReachGoal) {
  for (int level : {2, 3}) {
    const BatchScene b(level);
    const GoalSpec& goal = b.goal;
    PrimitivePlanner planner(b.config.robot, b.config.cuboid, goal, b.config.planner, b.config.sim.gravity);
    EpisodeSetup s;
    s.sim = b.config.sim;
    s.gains = b.config.controller;
    s.goal = goal;
    s.initial_pose = b.pose;
    s.duration = 20.0;
    s.record_stride = 1000;
    const EpisodeResult r = run_episode(b.config.robot, b.config.cuboid, s, planner);
    EXPECT_LT((r.final_object.pose.position - goal.position).norm(), 0.01) << "level " << level;
  }
}

TEST(PlanGrasp, FingersAtStandoffGiveHoldTrajectory) {
  PlanScene s;
  const Vec9 standoff = grasp_goals(s.pose, s.grasp, GraspStage::lower, s.config.standoff);
  Vec9 q = defaults::home_configuration();
  for (int f = 0; f < 3; ++f)
    q.segment<3>(3 * f) = finger_ik(s.model.fingers[f], q.segment<3>(3 * f), standoff.segment<3>(3 * f), 200, 1e-13);
  const FingerPlan p = plan_grasp(s.model, q, s.pose, s.grasp, GraspStage::lower, s.config);
  EXPECT_LT(p.result.cost, 1e-8);
  for (const auto& f : p.reference.force) EXPECT_EQ(f.norm(), 0.0);
}

TEST(PlanGrasp, StandoffPointsSitAtObjectHeightOutsideFaces) {
  PlanScene s;
  const Vec9 x = grasp_goals(s.pose, s.grasp, GraspStage::lower, s.config.standoff);
  for (int f = 0; f < 3; ++f) {
    const Vec3 c = contact_world_position(s.pose, s.grasp.for_finger(f));
    EXPECT_NEAR((tip(x, f) - c).norm(), s.config.standoff, 1e-12);
    EXPECT_NEAR(tip(x, f).z(), c.z(), 1e-12);
  }
}

TEST(PlanGrasp, PinchEndsOnContactsWithRampedForce) {
  PlanScene s;
  const FingerPlan lower = plan_grasp(s.model, defaults::home_configuration(), s.pose, s.grasp, GraspStage::lower, s.config);
  const Vec9 q = lower.solution.state.back();
  const FingerPlan pinch = plan_grasp(s.model, q, s.pose, s.grasp, GraspStage::pinch, s.config);
  const Vec9 contacts = grasp_goals(s.pose, s.grasp, GraspStage::pinch, 0.0);
  for (int f = 0; f < 3; ++f) EXPECT_LT((tip(pinch.solution.fingertips.back(), f) - tip(contacts, f)).norm(), 2e-3);
  EXPECT_EQ(pinch.reference.force.front().norm(), 0.0);
  const Vec9 last = pinch.reference.force.back();
  for (int f = 0; f < 3; ++f) {
    const Vec3 n = s.pose.orientation * s.grasp.for_finger(f).normal_body();
    EXPECT_GT(n.dot(last.segment<3>(3 * f)), 0.0);
  }
  Vec3 net = Vec3::Zero();
  for (int f = 0; f < 3; ++f) net += last.segment<3>(3 * f);
  EXPECT_LT(net.norm(), 1e-12);
}

TEST(PlanGrasp, OutOfArenaGoalLeavesLargeSlack) {
  PlanScene s;
  const Vec9 q0 = defaults::home_configuration();
  Vec9 goal = forward_kinematics(s.model, q0);
  for (int f = 0; f < 3; ++f) goal.segment<2>(3 * f) *= 0.3 / goal.segment<2>(3 * f).norm();
  const KnotGrid grid = KnotGrid::uniform(s.config.finger_knots, s.config.finger_dt);
  const NlpProblem p = transcribe_fingertip(s.model, q0, goal, grid, s.config.finger_weights, s.config.r_arena);
  const SolveResult r = solve(p, fingertip_warm_start(s.model, q0, goal, grid));
  EXPECT_LE(r.max_violation, 1e-6);
  EXPECT_GT(extract_fingertip_solution(s.model, grid, r.z).alpha.maxCoeff(), 1e-4);
}

TEST(PlanTurn, ZeroTurnIsHold) {
  PlanScene s;
  const ObjectPlan p = plan_turn(s.cuboid, s.grasp, s.pose, 0.0, s.config);
  EXPECT_LE(max_trapezoid_defect(p.solution), 1e-9);
  for (const auto& o : p.solution.state) EXPECT_LT((o.head<3>() - s.pose.position).norm(), 1e-6);
}

TEST(PlanTurn, QuarterPiTurnReachesYawAndRotatesContacts) {
  PlanScene s;
  const ObjectPlan p = plan_turn(s.cuboid, s.grasp, s.pose, kPi / 4, s.config);
  const ObjectPose end = object_pose(p.solution.state.back(), p.reference_rotation);
  const double err = wrap_angle(heading_yaw(s.cuboid, end) - (0.2 + kPi / 4));
  EXPECT_LT(std::abs(err), 2.0 * kPi / 180.0);
  // Terminal references are the contact points carried by the planned terminal rotation.
  const Mat3 r = rot_z(p.solution.state.back()[5]) * s.pose.rotation();
  for (int f = 0; f < 3; ++f) {
    const Vec3 expected = p.solution.state.back().head<3>() + r * s.grasp.for_finger(f).pos_body;
    EXPECT_LT((tip(p.reference.x.back(), f) - expected).norm(), 1e-6);
  }
}

TEST(PlanTurn, Preconditions) {
  PlanScene s;
  EXPECT_THROW(plan_turn(s.cuboid, s.grasp, s.pose, 0.9, s.config), InvalidInput);
  ObjectPose lifted = s.pose;
  lifted.position.z() += 0.03;
  EXPECT_THROW(plan_turn(s.cuboid, s.grasp, lifted, 0.3, s.config), PreconditionViolation);
}

TEST(PlanReposition, GoalAtCurrentPositionIsHold) {
  PlanScene s;
  const ObjectPlan p = plan_reposition(s.cuboid, s.grasp, s.pose, s.pose.position, s.config);
  for (const auto& o : p.solution.state) EXPECT_LT(o.norm() - s.pose.position.norm(), 1e-6);
}

TEST(PlanReposition, LiftedGoalReachedWithBoundedForces) {
  PlanScene s;
  const Vec3 goal = s.pose.position + Vec3(0.1, 0.0, 0.08 - s.pose.position.z());
  const ObjectPlan p = plan_reposition(s.cuboid, s.grasp, s.pose, goal, s.config);
  EXPECT_LT((p.solution.state.back().head<3>() - goal).norm(), 0.01);
  const double target = s.config.object_weights.lambda_target_normal;
  for (const auto& l : p.solution.input)
    for (int c = 0; c < 3; ++c) {
      EXPECT_GE(l[3 * c + 2], 0.5 * target);
      EXPECT_LE(l[3 * c + 2], 1.5 * target);
    }
}

// ---------------------------------------------------------------- config

TEST(Config, JsonRoundTrip) {
  const Config a;
  const Config b = config_from_json(config_to_json(a));
  EXPECT_EQ(config_to_json(a).dump(), config_to_json(b).dump());
}

TEST(Config, ShippedDefaultMatchesBuiltIn) {
  const Config c = load_config(DEXPRIM_SOURCE_DIR "/config/default.json");
  EXPECT_EQ(config_to_json(c).dump(), config_to_json(Config{}).dump());
}

TEST(Config, OverridesApply) {
  const Config c = parse_config(R"({"controller": {"kp": 150}, "sim": {"dt": 0.002}, "planner": {"yaw_symmetry": false}})");
  EXPECT_EQ(c.controller.kp, Vec3::Constant(150.0));
  EXPECT_EQ(c.sim.dt, 0.002);
  EXPECT_FALSE(c.planner.yaw_symmetry);
}

TEST(Config, CuboidInertiaFollowsDimensions) {
  const Config c = parse_config(R"({"cuboid": {"half_extents": [0.02, 0.02, 0.05], "mass": 0.2}})");
  EXPECT_LT((c.cuboid.inertia - Cuboid::box_inertia(Vec3(0.02, 0.02, 0.05), 0.2)).norm(), 1e-15);
}

TEST(Config, ErrorsAreConfigErrors) {
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(parse_config(R"({"sim": {"dtt": 0.001}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"sim": {"dt": "fast"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"sim": {"dt": -1}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"controller": {"kp": [1, 2]}})"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

// ---------------------------------------------------------------- cli

TEST(SampleGoal, LevelRules) {
  const double rest = Cuboid{}.rest_height();
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    EXPECT_EQ(sample_goal(2, seed).position, Vec3(0.0, 0.0, 0.08));
    const GoalSpec l1 = sample_goal(1, seed);
    EXPECT_EQ(l1.position.z(), rest);
    EXPECT_LE(l1.position.head<2>().norm(), 0.10);
    const GoalSpec l3 = sample_goal(3, seed);
    EXPECT_GE(l3.position.z(), rest);
    EXPECT_LE(l3.position.z(), 0.10);
    EXPECT_LE(l3.position.head<2>().norm(), 0.10);
    const GoalSpec l4 = sample_goal(4, seed);
    EXPECT_NO_THROW(l4.validate());
    EXPECT_EQ(l4.level, 4);
  }
  EXPECT_THROW(sample_goal(0, 1), InvalidInput);
}

TEST(SampleGoal, DeterministicInSeed) {
  for (int level = 1; level <= 4; ++level) {
    const GoalSpec a = sample_goal(level, 42), b = sample_goal(level, 42);
    EXPECT_EQ(a.position, b.position);
    EXPECT_EQ(a.yaw, b.yaw);
  }
  EXPECT_NE(sample_goal(1, 1).position, sample_goal(1, 2).position);
}

TEST(Median, OddAndEvenCounts) {
  EXPECT_EQ(median({3.0, -1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_THROW(median({}), InvalidInput);
}

TEST(RunSpec, Validation) {
  RunSpec s;
  s.episodes = 0;
  EXPECT_THROW(s.validate(), InvalidInput);
  s = RunSpec{};
  s.duration = 0.0;
  EXPECT_THROW(s.validate(), InvalidInput);
  s = RunSpec{};
  s.level = 5;
  EXPECT_THROW(s.validate(), InvalidInput);
}

TEST(TracePath, BatchSuffixes) {
  EXPECT_EQ(trace_path("out/run.csv", 2, 1, false), "out/run_g2_e1.csv");
  EXPECT_EQ(trace_path("out/run.csv", 0, 0, true), "out/run.csv");
}

namespace {

RunSpec quick_spec(int episodes, double duration) {
  RunSpec s;
  s.level = 1;
  s.episodes = episodes;
  s.seed = 7;
  s.duration = duration;
  return s;
}

std::string summary_text(const BatchResult& r, SummaryFormat f) {
  std::ostringstream os;
  write_summary(os, r, f);
  return os.str();
}

}  // namespace

TEST(Batch, ThreeEpisodesGiveOneMedianPerGoal) {
  const BatchResult r = run_batch(Config{}, quick_spec(3, 2.0));
  ASSERT_EQ(r.goals.size(), 1u);
  ASSERT_EQ(r.episodes.size(), 3u);
  EXPECT_EQ(r.goals[0].median_score, median(r.goals[0].scores));
  const std::string jsonl = summary_text(r, SummaryFormat::jsonl);
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 4);
  EXPECT_NE(jsonl.find("\"median_score\""), std::string::npos);
}

TEST(Batch, DurationSetsTraceLength) {
  RunSpec s = quick_spec(1, 5.0);
  const std::filesystem::path path = std::filesystem::temp_directory_path() / "dexprim_trace_test.csv";
  s.trace_out = path.string();
  run_batch(Config{}, s);
  std::ifstream in(path);
  std::string line;
  int steps = 0, summaries = 0;
  while (std::getline(in, line)) {
    steps += line.rfind("step,", 0) == 0;
    summaries += line.rfind("summary,", 0) == 0;
  }
  EXPECT_EQ(steps, 5000);
  EXPECT_EQ(summaries, 1);
  std::filesystem::remove(path);
}

TEST(Batch, SameSeedGivesIdenticalSummariesAcrossJobCounts) {
  RunSpec a = quick_spec(2, 3.0);
  a.goal_count = 2;
  RunSpec b = a;
  b.jobs = 3;
  const std::string sa = summary_text(run_batch(Config{}, a), SummaryFormat::table);
  const std::string sb = summary_text(run_batch(Config{}, b), SummaryFormat::table);
  EXPECT_EQ(sa, sb);
}

TEST(Batch, ExitStatusReflectsFailures) {
  BatchResult r;
  r.episodes.resize(3);
  EXPECT_EQ(exit_status(r), 0);
  r.episodes[1].failed = true;
  EXPECT_EQ(exit_status(r), 1);
}

namespace {

int run_dexsim(const std::string& args) {
  const std::string cmd = std::string(DEXSIM_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Dexsim, ExitCodes) {
  EXPECT_EQ(run_dexsim("--level 1 --duration 0.5"), 0);
  EXPECT_EQ(run_dexsim("--level 5"), 2);
  EXPECT_EQ(run_dexsim("--level 1 --goal 1,2"), 2);
  EXPECT_EQ(run_dexsim("--no-such-flag"), 2);
  const std::filesystem::path bad = std::filesystem::temp_directory_path() / "dexprim_bad_config.json";
  std::ofstream(bad) << R"({"sim": {"dtt": 1}})";
  EXPECT_EQ(run_dexsim("--config " + bad.string()), 2);
  std::filesystem::remove(bad);
  EXPECT_EQ(run_dexsim("default-config"), 0);
  EXPECT_EQ(run_dexsim("dump-problem --kind object"), 0);
}
