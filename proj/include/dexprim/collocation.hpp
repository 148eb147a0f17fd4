#pragma once

#include "dexprim/nlp.hpp"
#include "dexprim/object_model.hpp"
#include "dexprim/robot_model.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace dexprim {

struct KnotGrid {
  int T = 1;
  VecX times = VecX::LinSpaced(2, 0.0, 0.1);

  static KnotGrid uniform(int knots, double dt, double t0 = 0.0) {
    if (knots < 1) throw InvalidInput("KnotGrid: need T >= 1");
    if (!(dt > 0.0)) throw InvalidInput("KnotGrid: dt must be positive");
    KnotGrid g;
    g.T = knots;
    g.times.resize(knots + 1);
    for (int k = 0; k <= knots; ++k) g.times[k] = t0 + k * dt;
    return g;
  }

  double step(int k) const { return times[k + 1] - times[k]; }
  double start() const { return times[0]; }
  double end() const { return times[T]; }
  double duration() const { return end() - start(); }

  void validate() const {
    if (T < 1) throw InvalidInput("KnotGrid: need T >= 1");
    if (times.size() != T + 1) throw InvalidInput("KnotGrid: times must have T+1 entries");
    require_finite(times, "KnotGrid times");
    for (int k = 0; k < T; ++k)
      if (!(times[k + 1] > times[k])) throw InvalidInput("KnotGrid: times must strictly increase");
  }
};

inline bool is_symmetric_psd(const MatX& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol) return false;
  return Eigen::SelfAdjointEigenSolver<MatX>(m).eigenvalues().minCoeff() >= -tol;
}

struct TrajOptWeights {
  MatX Q;
  MatX R;
  double slack_weight = 1e3;
  double lambda_target_normal = 1.0;

  /// Q on the stacked fingertip error, R on joint velocities.
  static TrajOptWeights fingertip() {
    TrajOptWeights w;
    w.Q = MatX::Identity(9, 9);
    w.R = 1e-2 * MatX::Identity(9, 9);
    return w;
  }
  /// Q on the xyz + rpy pose error, R on the contact force deviation.
  static TrajOptWeights object() {
    TrajOptWeights w;
    w.Q = MatX::Identity(6, 6);
    w.Q.diagonal().tail<3>().setConstant(0.5);
    w.R = 1e-2 * MatX::Identity(9, 9);
    return w;
  }

  void validate(int q_size, int r_size) const {
    if (Q.rows() != q_size || R.rows() != r_size)
      throw InvalidInput("TrajOptWeights: Q/R have the wrong dimension");
    if (!is_symmetric_psd(Q) || !is_symmetric_psd(R))
      throw InvalidInput("TrajOptWeights: Q and R must be symmetric positive semidefinite");
    if (!(slack_weight >= 0.0)) throw InvalidInput("TrajOptWeights: slack_weight must be >= 0");
    if (!std::isfinite(lambda_target_normal))
      throw InvalidInput("TrajOptWeights: lambda_target_normal must be finite");
  }
};

// ---------------------------------------------------------------------------
// Fingertip problem: joint knots, joint-velocity knots and one terminal slack per
// fingertip coordinate.

inline NlpProblem transcribe_fingertip(const RobotModel& model, const Vec9& q0, const Vec9& x_goal,
                                       const KnotGrid& grid, const TrajOptWeights& weights,
                                       double r_arena) {
  grid.validate();
  weights.validate(9, 9);
  require_finite(q0, "transcribe_fingertip q0");
  require_finite(x_goal, "transcribe_fingertip x_goal");
  if (!(r_arena > 0.0)) throw InvalidInput("transcribe_fingertip: r_arena must be positive");
  const Vec9 lo = model.joint_lower(), hi = model.joint_upper(), vmax = model.vel_limit();
  if ((q0.array() < lo.array()).any() || (q0.array() > hi.array()).any())
    throw InvalidInput("transcribe_fingertip: q0 lies outside the joint limits");

  const int T = grid.T, K = T + 1;
  NlpProblem p;
  const int oq = p.layout.add("q", 9 * K);
  const int ov = p.layout.add("qdot", 9 * K);
  const int oa = p.layout.add("alpha", 9);
  p.n_vars = p.layout.total();
  p.n_eq = 9 * T + 9;
  p.n_ineq = 3 * K + 9;

  p.lower.resize(p.n_vars);
  p.upper.resize(p.n_vars);
  for (int k = 0; k < K; ++k) {
    p.lower.segment<9>(oq + 9 * k) = lo;
    p.upper.segment<9>(oq + 9 * k) = hi;
    p.lower.segment<9>(ov + 9 * k) = -vmax;
    p.upper.segment<9>(ov + 9 * k) = vmax;
  }
  p.lower.segment<9>(oa).setZero();
  p.upper.segment<9>(oa).setConstant(std::numeric_limits<double>::infinity());

  const MatX Q = weights.Q, R = weights.R;
  const double ws = weights.slack_weight;
  auto qk = [oq](const VecX& z, int k) -> Vec9 { return z.segment<9>(oq + 9 * k); };
  auto vk = [ov](const VecX& z, int k) -> Vec9 { return z.segment<9>(ov + 9 * k); };

  p.cost = [=](const VecX& z) {
    double c = 0.0;
    for (int k = 0; k < K; ++k) {
      const Vec9 e = x_goal - forward_kinematics(model, qk(z, k));
      const Vec9 v = vk(z, k);
      c += e.dot(Q * e) + v.dot(R * v);
    }
    return c + ws * z.segment<9>(oa).sum();
  };
  p.cost_gradient = [=](const VecX& z) {
    VecX g = VecX::Zero(z.size());
    for (int k = 0; k < K; ++k) {
      const Vec9 q = qk(z, k);
      const Vec9 e = x_goal - forward_kinematics(model, q);
      g.segment<9>(oq + 9 * k) = -2.0 * fingertip_jacobian(model, q).transpose() * (Q * e);
      g.segment<9>(ov + 9 * k) = 2.0 * R * vk(z, k);
    }
    g.segment<9>(oa).setConstant(ws);
    return g;
  };
  // Constraint rows: 3 arena rows per knot, then the 9 terminal rows.
  p.lagrangian_hessian = [=](const VecX& z, const VecX&, const VecX& wi) {
    MatX h = MatX::Zero(z.size(), z.size());
    for (int k = 0; k < K; ++k) {
      const Vec9 q = qk(z, k);
      const Vec9 x = forward_kinematics(model, q);
      const Vec9 e = x_goal - x;
      const Mat9 jac = fingertip_jacobian(model, q);
      // Weight on d2 x from the cost, the arena rows and (at T) the terminal rows.
      Vec9 w = -2.0 * (Q * e);
      Mat9 outer = 2.0 * jac.transpose() * Q * jac;
      for (int f = 0; f < 3; ++f) {
        const double wa = wi[3 * k + f];
        if (wa == 0.0) continue;
        w[3 * f] += 2.0 * wa * x[3 * f];
        w[3 * f + 1] += 2.0 * wa * x[3 * f + 1];
        const auto jf = jac.block<2, 3>(3 * f, 3 * f);
        outer.block<3, 3>(3 * f, 3 * f) += 2.0 * wa * jf.transpose() * jf;
      }
      if (k == T)
        for (int i = 0; i < 9; ++i) {
          const double wt = wi[3 * K + i];
          w[i] -= 2.0 * wt * e[i];
          outer += 2.0 * wt * jac.row(i).transpose() * jac.row(i);
        }
      for (int f = 0; f < 3; ++f) {
        const FingerFrames fr = finger_frames(model.fingers[f], q.segment<3>(3 * f));
        outer.block<3, 3>(3 * f, 3 * f) += weighted_finger_hessian(fr, w.segment<3>(3 * f));
      }
      h.block<9, 9>(oq + 9 * k, oq + 9 * k) = outer;
      h.block<9, 9>(ov + 9 * k, ov + 9 * k) = 2.0 * R;
    }
    return h;
  };

  // Trapezoidal defects, then the fixed initial configuration. Both are linear.
  MatX je = MatX::Zero(p.n_eq, p.n_vars);
  for (int k = 0; k < T; ++k) {
    const double h = grid.step(k);
    const int r = 9 * k;
    for (int i = 0; i < 9; ++i) {
      je(r + i, oq + 9 * (k + 1) + i) = 1.0;
      je(r + i, oq + 9 * k + i) = -1.0;
      je(r + i, ov + 9 * (k + 1) + i) = -0.5 * h;
      je(r + i, ov + 9 * k + i) = -0.5 * h;
    }
  }
  for (int i = 0; i < 9; ++i) je(9 * T + i, oq + i) = 1.0;
  const VecX offset = [&] {
    VecX b = VecX::Zero(p.n_eq);
    b.tail<9>() = -q0;
    return b;
  }();
  p.eq = [je, offset](const VecX& z) { return VecX(je * z + offset); };
  p.eq_jacobian = [je](const VecX&) { return je; };

  const double r2 = r_arena * r_arena;
  p.ineq = [=](const VecX& z) {
    VecX c(3 * K + 9);
    for (int k = 0; k < K; ++k) {
      const Vec9 x = forward_kinematics(model, qk(z, k));
      for (int f = 0; f < 3; ++f) c[3 * k + f] = x[3 * f] * x[3 * f] + x[3 * f + 1] * x[3 * f + 1] - r2;
    }
    const Vec9 e = x_goal - forward_kinematics(model, qk(z, T));
    c.tail<9>() = e.cwiseProduct(e) - z.segment<9>(oa);
    return c;
  };
  p.ineq_jacobian = [=](const VecX& z) {
    MatX j = MatX::Zero(3 * K + 9, z.size());
    for (int k = 0; k < K; ++k) {
      const Vec9 q = qk(z, k);
      const Vec9 x = forward_kinematics(model, q);
      const Mat9 jac = fingertip_jacobian(model, q);
      for (int f = 0; f < 3; ++f) {
        const Eigen::RowVector3d w(2.0 * x[3 * f], 2.0 * x[3 * f + 1], 0.0);
        j.block<1, 3>(3 * k + f, oq + 9 * k + 3 * f) = w * jac.block<3, 3>(3 * f, 3 * f);
      }
    }
    const Vec9 q = qk(z, T);
    const Vec9 e = x_goal - forward_kinematics(model, q);
    const Mat9 jac = fingertip_jacobian(model, q);
    for (int i = 0; i < 9; ++i) {
      j.block<1, 9>(3 * K + i, oq + 9 * T) = -2.0 * e[i] * jac.row(i);
      j(3 * K + i, oa + i) = -1.0;
    }
    return j;
  };
  return p;
}

/// Holds q0 with zero velocity; slacks start at the terminal squared error so the
/// initial point meets the terminal constraint.
inline VecX fingertip_warm_start(const RobotModel& model, const Vec9& q0, const Vec9& x_goal,
                                 const KnotGrid& grid) {
  const int K = grid.T + 1;
  VecX z = VecX::Zero(18 * K + 9);
  for (int k = 0; k < K; ++k) z.segment<9>(9 * k) = q0;
  const Vec9 e = x_goal - forward_kinematics(model, q0);
  z.tail<9>() = e.cwiseProduct(e);
  return z;
}

// ---------------------------------------------------------------------------
// Object problem. Poses are xyz + roll-pitch-yaw, the orientation being
// R(o) = rpy_to_matrix(o.rpy) * reference_rotation. Contact forces are zero-order
// held: lambda_k acts over [t_k, t_k+1], so there are T force knots.

struct ObjectTranscriptionOptions {
  Mat3 reference_rotation = Mat3::Identity();
  Vec3 gravity{0.0, 0.0, -9.81};
  bool friction_cones = false;
  double friction = 0.7;
  int cone_sides = 4;
  /// Contact-frame force the R term pulls towards; normal_force_target when unset.
  std::optional<Vec9> lambda_target;
  /// Adds odot_T = 0 after the initial-state rows.
  bool terminal_rest = false;
};

inline Mat3 object_rotation(const Vec6& o, const Mat3& reference) {
  return rpy_to_matrix(o.tail<3>()) * reference;
}

inline ObjectPose object_pose(const Vec6& o, const Mat3& reference) {
  return ObjectPose::from_rotation(o.head<3>(), object_rotation(o, reference));
}

/// Body-frame map from contact forces to [linear accel without gravity; angular accel].
inline Mat69 body_acceleration_map(const Cuboid& cuboid, const GraspSpec& grasp) {
  Mat69 b;
  const Mat3 inv_inertia = cuboid.inertia.inverse();
  for (int c = 0; c < 3; ++c) {
    const Mat3& f = grasp.contacts[c].frame_body;
    b.block<3, 3>(0, 3 * c) = f / cuboid.mass;
    b.block<3, 3>(3, 3 * c) = inv_inertia * skew(grasp.contacts[c].pos_body) * f;
  }
  return b;
}

/// Pose second derivative with rpy rates standing in for angular velocity and the
/// gyroscopic term dropped.
inline Vec6 object_acceleration(const Mat69& body_map, const Vec6& o, const Vec9& lambda,
                                const Mat3& reference, const Vec3& gravity) {
  const Mat3 r = object_rotation(o, reference);
  const Vec6 b = body_map * lambda;
  Vec6 a;
  a << r * b.head<3>() + gravity, r * b.tail<3>();
  return a;
}

inline NlpProblem transcribe_object(const Cuboid& cuboid, const GraspSpec& grasp, const Vec6& o0,
                                    const Vec6& o_goal, const KnotGrid& grid,
                                    const TrajOptWeights& weights,
                                    const ObjectTranscriptionOptions& opt = {}) {
  grid.validate();
  weights.validate(6, 9);
  cuboid.validate();
  try {
    grasp.validate(cuboid);
  } catch (const InvalidInput& e) {
    throw InvalidInput(std::string("transcribe_object: grasp does not fit the cuboid: ") + e.what());
  }
  require_finite(o0, "transcribe_object o0");
  require_finite(o_goal, "transcribe_object o_goal");
  if (!is_rotation(opt.reference_rotation, 1e-9))
    throw InvalidInput("transcribe_object: reference_rotation is not a rotation");

  const int T = grid.T, K = T + 1;
  const int cone_rows = opt.friction_cones ? 3 * (opt.cone_sides + 1) : 0;
  NlpProblem p;
  const int oo = p.layout.add("o", 6 * K);
  const int ov = p.layout.add("odot", 6 * K);
  const int ol = p.layout.add("lambda", 9 * T);
  const int oa = p.layout.add("alpha", 6);
  p.n_vars = p.layout.total();
  const int rest_rows = opt.terminal_rest ? 6 : 0;
  p.n_eq = 12 * T + 12 + rest_rows;
  p.n_ineq = 6 + cone_rows * T;
  const double inf = std::numeric_limits<double>::infinity();
  p.lower = VecX::Constant(p.n_vars, -inf);
  p.upper = VecX::Constant(p.n_vars, inf);
  p.lower.segment<6>(oa).setZero();

  const Mat69 bmap = body_acceleration_map(cuboid, grasp);
  const Mat3 ref = opt.reference_rotation;
  const Vec3 grav = opt.gravity;
  const MatX Q = weights.Q, R = weights.R;
  const double ws = weights.slack_weight;
  const Vec9 target = opt.lambda_target ? *opt.lambda_target : normal_force_target(weights.lambda_target_normal);
  require_finite(target, "transcribe_object lambda_target");

  auto ok = [oo](const VecX& z, int k) -> Vec6 { return z.segment<6>(oo + 6 * k); };
  auto vk = [ov](const VecX& z, int k) -> Vec6 { return z.segment<6>(ov + 6 * k); };
  auto lk = [ol](const VecX& z, int k) -> Vec9 { return z.segment<9>(ol + 9 * k); };

  p.cost = [=](const VecX& z) {
    double c = 0.0;
    for (int k = 0; k < K; ++k) {
      const Vec6 e = o_goal - ok(z, k);
      c += e.dot(Q * e);
    }
    for (int k = 0; k < T; ++k) {
      const Vec9 d = target - lk(z, k);
      c += d.dot(R * d);
    }
    return c + ws * z.segment<6>(oa).sum();
  };
  p.cost_gradient = [=](const VecX& z) {
    VecX g = VecX::Zero(z.size());
    for (int k = 0; k < K; ++k) g.segment<6>(oo + 6 * k) = -2.0 * Q * (o_goal - ok(z, k));
    for (int k = 0; k < T; ++k) g.segment<9>(ol + 9 * k) = -2.0 * R * (target - lk(z, k));
    g.segment<6>(oa).setConstant(ws);
    return g;
  };
  // Equality rows per interval: 6 pose defects, then 6 twist defects.
  p.lagrangian_hessian = [=](const VecX& z, const VecX& we, const VecX& wi) {
    MatX h = MatX::Zero(z.size(), z.size());
    for (int k = 0; k < K; ++k) h.block<6, 6>(oo + 6 * k, oo + 6 * k) = 2.0 * Q;
    for (int k = 0; k < T; ++k) h.block<9, 9>(ol + 9 * k, ol + 9 * k) = 2.0 * R;
    for (int i = 0; i < 6; ++i) h(oo + 6 * T + i, oo + 6 * T + i) += 2.0 * wi[i];
    for (int k = 0; k < T; ++k) {
      const Vec6 w = -0.5 * grid.step(k) * we.segment<6>(12 * k + 6);
      if (w.isZero(0.0)) continue;
      const Vec9 l = lk(z, k);
      const Vec6 b = bmap * l;
      const int cl = ol + 9 * k;
      for (int kk : {k, k + 1}) {
        const Vec3 rpy = ok(z, kk).tail<3>();
        const auto d1 = rpy_matrix_derivatives(rpy);
        const auto d2 = rpy_matrix_second_derivatives(rpy);
        const int cr = oo + 6 * kk + 3;
        for (int a = 0; a < 3; ++a) {
          for (int c = 0; c < 3; ++c) {
            const Mat3 m = d2[a][c] * ref;
            h(cr + a, cr + c) += w.head<3>().dot(m * b.head<3>()) + w.tail<3>().dot(m * b.tail<3>());
          }
          const Mat3 m = d1[a] * ref;
          const Eigen::Matrix<double, 1, 9> row =
              (m.transpose() * w.head<3>()).transpose() * bmap.topRows<3>() +
              (m.transpose() * w.tail<3>()).transpose() * bmap.bottomRows<3>();
          h.block<1, 9>(cr + a, cl) += row;
          h.block<9, 1>(cl, cr + a) += row.transpose();
        }
      }
    }
    return h;
  };

  p.eq = [=](const VecX& z) {
    VecX c(12 * T + 12 + rest_rows);
    for (int k = 0; k < T; ++k) {
      const double h = grid.step(k);
      const Vec9 l = lk(z, k);
      const Vec6 a0 = object_acceleration(bmap, ok(z, k), l, ref, grav);
      const Vec6 a1 = object_acceleration(bmap, ok(z, k + 1), l, ref, grav);
      c.segment<6>(12 * k) = ok(z, k + 1) - ok(z, k) - 0.5 * h * (vk(z, k + 1) + vk(z, k));
      c.segment<6>(12 * k + 6) = vk(z, k + 1) - vk(z, k) - 0.5 * h * (a1 + a0);
    }
    c.segment<6>(12 * T) = ok(z, 0) - o0;
    c.segment<6>(12 * T + 6) = vk(z, 0);
    if (rest_rows) c.tail<6>() = vk(z, T);
    return c;
  };
  p.eq_jacobian = [=](const VecX& z) {
    MatX j = MatX::Zero(12 * T + 12 + rest_rows, z.size());
    // d accel / d (rpy, lambda) at pose o with force l.
    auto accel_jac = [&](const Vec6& o, const Vec9& l, Eigen::Matrix<double, 6, 3>& d_rpy,
                         Mat69& d_lambda) {
      const Mat3 r = object_rotation(o, ref);
      const Vec6 b = bmap * l;
      const auto dr = rpy_matrix_derivatives(o.tail<3>());
      for (int a = 0; a < 3; ++a) {
        const Mat3 dra = dr[a] * ref;
        d_rpy.col(a) << dra * b.head<3>(), dra * b.tail<3>();
      }
      d_lambda.topRows<3>() = r * bmap.topRows<3>();
      d_lambda.bottomRows<3>() = r * bmap.bottomRows<3>();
    };
    for (int k = 0; k < T; ++k) {
      const double h = grid.step(k);
      const int r0 = 12 * k, r1 = 12 * k + 6;
      j.block<6, 6>(r0, oo + 6 * (k + 1)).setIdentity();
      j.block<6, 6>(r0, oo + 6 * k) = -Mat6::Identity();
      j.block<6, 6>(r0, ov + 6 * (k + 1)) = -0.5 * h * Mat6::Identity();
      j.block<6, 6>(r0, ov + 6 * k) = -0.5 * h * Mat6::Identity();

      j.block<6, 6>(r1, ov + 6 * (k + 1)).setIdentity();
      j.block<6, 6>(r1, ov + 6 * k) = -Mat6::Identity();
      const Vec9 l = lk(z, k);
      Eigen::Matrix<double, 6, 3> d0, d1;
      Mat69 dl0, dl1;
      accel_jac(ok(z, k), l, d0, dl0);
      accel_jac(ok(z, k + 1), l, d1, dl1);
      j.block<6, 3>(r1, oo + 6 * k + 3) = -0.5 * h * d0;
      j.block<6, 3>(r1, oo + 6 * (k + 1) + 3) = -0.5 * h * d1;
      j.block<6, 9>(r1, ol + 9 * k) = -0.5 * h * (dl0 + dl1);
    }
    j.block<6, 6>(12 * T, oo).setIdentity();
    j.block<6, 6>(12 * T + 6, ov).setIdentity();
    if (rest_rows) j.block<6, 6>(12 * T + 12, ov + 6 * T).setIdentity();
    return j;
  };

  const MatX cone = opt.friction_cones ? friction_cone_matrix(opt.friction, opt.cone_sides) : MatX();
  p.ineq = [=](const VecX& z) {
    VecX c(6 + cone_rows * T);
    const Vec6 e = o_goal - ok(z, T);
    c.head<6>() = e.cwiseProduct(e) - z.segment<6>(oa);
    for (int k = 0; k < T && cone_rows; ++k)
      c.segment(6 + cone_rows * k, cone_rows) =
          friction_cone_residuals(lk(z, k), opt.friction, opt.cone_sides);
    return c;
  };
  p.ineq_jacobian = [=](const VecX& z) {
    MatX j = MatX::Zero(6 + cone_rows * T, z.size());
    const Vec6 e = o_goal - ok(z, T);
    for (int i = 0; i < 6; ++i) {
      j(i, oo + 6 * T + i) = -2.0 * e[i];
      j(i, oa + i) = -1.0;
    }
    const int per = opt.cone_sides + 1;
    for (int k = 0; k < T && cone_rows; ++k)
      for (int c = 0; c < 3; ++c) j.block(6 + cone_rows * k + per * c, ol + 9 * k + 3 * c, per, 3) = cone;
    return j;
  };
  return p;
}

/// Linear pose interpolation, zero twist, equilibrium forces at o0 and slacks that
/// satisfy the terminal constraint.
inline VecX object_warm_start(const Cuboid& cuboid, const GraspSpec& grasp, const Vec6& o0,
                              const Vec6& o_goal, const KnotGrid& grid, const TrajOptWeights& weights,
                              const ObjectTranscriptionOptions& opt = {}) {
  const int T = grid.T, K = T + 1;
  VecX z = VecX::Zero(12 * K + 9 * T + 6);
  for (int k = 0; k < K; ++k) {
    const double s = (grid.times[k] - grid.start()) / grid.duration();
    z.segment<6>(6 * k) = (1.0 - s) * o0 + s * o_goal;
  }
  const Vec9 l = equilibrium_contact_forces(cuboid, object_pose(o0, opt.reference_rotation), grasp,
                                            opt.gravity,
                                            opt.lambda_target ? *opt.lambda_target
                                                              : normal_force_target(weights.lambda_target_normal));
  for (int k = 0; k < T; ++k) z.segment<9>(12 * K + 9 * k) = l;
  z.tail<6>().setConstant(1e-6);
  return z;
}

// ---------------------------------------------------------------------------
// Solutions and references.

struct TrajectorySolution {
  KnotGrid grid;
  std::vector<VecX> state;  // q_k or o_k, T+1 entries
  std::vector<VecX> rate;   // qdot_k or odot_k, T+1 entries
  std::vector<VecX> input;  // lambda_k for the object problem (T entries), empty otherwise
  VecX alpha;
  std::vector<Vec9> fingertips;  // x_k for the fingertip problem

  void validate() const {
    grid.validate();
    const size_t K = grid.T + 1;
    if (state.size() != K || rate.size() != K)
      throw InvalidInput("TrajectorySolution: state/rate length does not match the grid");
    if (!input.empty() && input.size() != static_cast<size_t>(grid.T))
      throw InvalidInput("TrajectorySolution: input length does not match the grid");
    if (!fingertips.empty() && fingertips.size() != K)
      throw InvalidInput("TrajectorySolution: fingertip length does not match the grid");
    if (alpha.size() && alpha.minCoeff() < -1e-9)
      throw InvalidInput("TrajectorySolution: negative slack");
  }
};

inline TrajectorySolution extract_fingertip_solution(const RobotModel& model, const KnotGrid& grid,
                                                     const VecX& z) {
  const int K = grid.T + 1;
  if (z.size() != 18 * K + 9) throw InvalidInput("extract_fingertip_solution: wrong vector size");
  TrajectorySolution s;
  s.grid = grid;
  for (int k = 0; k < K; ++k) {
    s.state.push_back(z.segment<9>(9 * k));
    s.rate.push_back(z.segment<9>(9 * K + 9 * k));
    s.fingertips.push_back(forward_kinematics(model, z.segment<9>(9 * k)));
  }
  s.alpha = z.tail<9>();
  return s;
}

inline TrajectorySolution extract_object_solution(const KnotGrid& grid, const VecX& z) {
  const int T = grid.T, K = T + 1;
  if (z.size() != 12 * K + 9 * T + 6) throw InvalidInput("extract_object_solution: wrong vector size");
  TrajectorySolution s;
  s.grid = grid;
  for (int k = 0; k < K; ++k) {
    s.state.push_back(z.segment<6>(6 * k));
    s.rate.push_back(z.segment<6>(6 * K + 6 * k));
  }
  for (int k = 0; k < T; ++k) s.input.push_back(z.segment<9>(12 * K + 9 * k));
  s.alpha = z.tail<6>();
  return s;
}

/// Largest trapezoidal defect |s_k+1 - s_k - h/2 (r_k+1 + r_k)| over a solution's knots.
inline double max_trapezoid_defect(const TrajectorySolution& s) {
  double m = 0.0;
  for (int k = 0; k < s.grid.T; ++k) {
    const VecX d = s.state[k + 1] - s.state[k] - 0.5 * s.grid.step(k) * (s.rate[k + 1] + s.rate[k]);
    m = std::max(m, d.cwiseAbs().maxCoeff());
  }
  return m;
}

/// World-frame fingertip positions and per-finger forces at each knot.
struct FingertipTrajectory {
  KnotGrid grid;
  std::vector<Vec9> x;
  std::vector<Vec9> force;
  bool force_held = false;  // force[k] acts over [t_k, t_k+1) instead of being interpolated

  void validate() const {
    grid.validate();
    if (x.size() != static_cast<size_t>(grid.T + 1) || force.size() != x.size())
      throw InvalidInput("FingertipTrajectory: lengths do not match the grid");
  }
};

inline FingertipTrajectory fingertip_trajectory(const TrajectorySolution& s) {
  FingertipTrajectory f;
  f.grid = s.grid;
  f.x = s.fingertips;
  f.force.assign(f.x.size(), Vec9::Zero());
  return f;
}

/// Fingertip references follow the assigned contact points under each o_k. Force knot k
/// uses lambda_k (the last knot repeats lambda_T-1) expressed per finger in world frame.
inline FingertipTrajectory fingertips_from_object_solution(const GraspSpec& grasp,
                                                           const TrajectorySolution& s,
                                                           const Mat3& reference_rotation) {
  if (s.input.size() != static_cast<size_t>(s.grid.T))
    throw InvalidInput("fingertips_from_object_solution: not an object solution");
  FingertipTrajectory f;
  f.grid = s.grid;
  f.force_held = true;
  for (int k = 0; k <= s.grid.T; ++k) {
    const ObjectPose pose = object_pose(s.state[k], reference_rotation);
    Vec9 x;
    for (int fi = 0; fi < kNumFingers; ++fi)
      x.segment<3>(3 * fi) = contact_world_position(pose, grasp.for_finger(fi));
    f.x.push_back(x);
    f.force.push_back(contact_to_world_forces(pose, grasp, s.input[std::min(k, s.grid.T - 1)]));
  }
  return f;
}

/// Piecewise-linear interpolation of knot values; throws RangeError outside the grid.
template <class V>
V interpolate_knots(const KnotGrid& grid, const std::vector<V>& values, double t) {
  if (!(t >= grid.start() && t <= grid.end()))
    throw RangeError("interpolate: t lies outside the knot grid");
  const double* begin = grid.times.data();
  const double* it = std::upper_bound(begin, begin + grid.T + 1, t);
  int k = static_cast<int>(it - begin) - 1;
  if (k >= grid.T) return values[grid.T];
  const double s = (t - grid.times[k]) / grid.step(k);
  if (s == 0.0) return values[k];
  return V((1.0 - s) * values[k] + s * values[k + 1]);
}

struct KnotSample {
  VecX state;
  VecX rate;
};

inline KnotSample interpolate(const TrajectorySolution& s, double t) {
  return {interpolate_knots(s.grid, s.state, t), interpolate_knots(s.grid, s.rate, t)};
}

}  // namespace dexprim
