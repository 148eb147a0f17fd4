#pragma once

#include "dexprim/common.hpp"
#include "dexprim/robot_model.hpp"

#include <array>
#include <limits>
#include <numeric>

namespace dexprim {

struct Cuboid {
  Vec3 half_extents{0.01, 0.01, 0.04};
  double mass = 0.094;
  Mat3 inertia = box_inertia(Vec3{0.01, 0.01, 0.04}, 0.094);
  double friction = 0.7;

  static Mat3 box_inertia(const Vec3& half, double mass) {
    const Vec3 sq = half.cwiseProduct(half);
    return (mass / 3.0 * Vec3{sq.y() + sq.z(), sq.x() + sq.z(), sq.x() + sq.y()}).asDiagonal();
  }

  static Cuboid from_dimensions(const Vec3& half_extents, double mass, double friction = 0.7) {
    Cuboid c;
    c.half_extents = half_extents;
    c.mass = mass;
    c.inertia = box_inertia(half_extents, mass);
    c.friction = friction;
    c.validate();
    const Mat3 expected = box_inertia(half_extents, mass);
    if ((c.inertia - expected).cwiseAbs().maxCoeff() > 1e-12)
      throw InvalidInput("Cuboid: inertia does not match box formula");
    return c;
  }

  void validate() const {
    if (!(half_extents.minCoeff() > 0.0)) throw InvalidInput("Cuboid: half extents must be > 0");
    if (!(mass > 0.0)) throw InvalidInput("Cuboid: mass must be > 0");
    if ((inertia - inertia.transpose()).cwiseAbs().maxCoeff() > 1e-15)
      throw InvalidInput("Cuboid: inertia must be symmetric");
    if (Eigen::SelfAdjointEigenSolver<Mat3>(inertia).eigenvalues().minCoeff() <= 0.0)
      throw InvalidInput("Cuboid: inertia must be positive definite");
  }

  int long_axis() const {
    int a = 0;
    half_extents.maxCoeff(&a);
    return a;
  }
  /// Body axis normal to the pinched faces.
  int pinch_axis() const { return (long_axis() + 2) % 3; }
  int vertical_axis() const { return 3 - long_axis() - pinch_axis(); }

  /// CoM height when lying flat on the z = 0 table.
  double rest_height() const { return half_extents[vertical_axis()]; }

  /// 6x6 block-diag(m I, R I_body R^T).
  Mat6 mass_matrix(const Mat3& rotation) const {
    Mat6 m = Mat6::Zero();
    m.topLeftCorner<3, 3>() = mass * Mat3::Identity();
    m.bottomRightCorner<3, 3>() = rotation * inertia * rotation.transpose();
    return m;
  }
};

struct ObjectPose {
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  Mat3 rotation() const { return orientation.toRotationMatrix(); }
  Vec3 rpy() const { return matrix_to_rpy(rotation()); }
  Vec3 to_world(const Vec3& body_point) const { return position + orientation * body_point; }

  void validate() const {
    require_finite(position, "ObjectPose position");
    if (std::abs(orientation.norm() - 1.0) > 1e-9)
      throw InvalidInput("ObjectPose: quaternion is not unit-norm");
  }

  static ObjectPose from_rotation(const Vec3& p, const Mat3& r) {
    ObjectPose pose;
    pose.position = p;
    pose.orientation = Eigen::Quaterniond(r).normalized();
    return pose;
  }
};

/// Orientation lying flat: long axis along world x rotated by yaw, pinched faces horizontal.
inline Mat3 rest_orientation(const Cuboid& cuboid, double yaw) {
  Mat3 r = Mat3::Zero();
  r.col(cuboid.long_axis()) = Vec3::UnitX();
  r.col(cuboid.pinch_axis()) = Vec3::UnitY();
  r.col(cuboid.vertical_axis()) = Vec3::UnitZ();
  if (r.determinant() < 0.0) r.col(cuboid.vertical_axis()) = -Vec3::UnitZ();
  return rot_z(yaw) * r;
}

inline ObjectPose resting_pose(const Cuboid& cuboid, const Vec3& xy, double yaw) {
  return ObjectPose::from_rotation(Vec3{xy.x(), xy.y(), cuboid.rest_height()},
                                   rest_orientation(cuboid, yaw));
}

/// Heading of the long axis in the table plane. The cuboid is symmetric
/// under a half turn, so callers compare headings modulo pi when that matters.
inline double heading_yaw(const Cuboid& cuboid, const ObjectPose& pose) {
  const Vec3 a = pose.rotation().col(cuboid.long_axis());
  return std::atan2(a.y(), a.x());
}

/// Lowest world z of the cuboid's eight corners.
inline double lowest_point(const Cuboid& cuboid, const ObjectPose& pose) {
  const Mat3 r = pose.rotation();
  double support = 0.0;
  for (int i = 0; i < 3; ++i) support += std::abs(r(2, i)) * cuboid.half_extents[i];
  return pose.position.z() - support;
}

struct ContactPoint {
  Vec3 pos_body = Vec3::Zero();
  /// Columns: tangent along the long axis, second tangent, inward normal.
  Mat3 frame_body = Mat3::Identity();

  Vec3 normal_body() const { return frame_body.col(2); }
};

struct GraspSpec {
  std::array<ContactPoint, 3> contacts;
  /// finger_assignment[finger] = contact index.
  std::array<int, 3> finger_assignment{0, 1, 2};

  const ContactPoint& for_finger(int finger) const {
    return contacts[finger_assignment[finger]];
  }

  void validate(const Cuboid& cuboid) const {
    std::array<int, 3> sorted = finger_assignment;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != std::array<int, 3>{0, 1, 2})
      throw InvalidInput("GraspSpec: finger_assignment is not a permutation");
    std::array<int, 3> face_axis{};
    std::array<double, 3> face_sign{};
    for (int c = 0; c < 3; ++c) {
      const ContactPoint& cp = contacts[c];
      if (!is_rotation(cp.frame_body, 1e-10))
        throw InvalidInput("GraspSpec: contact frame is not orthonormal");
      // The contact must sit on a face: one coordinate at +-half extent, the rest inside.
      int on_face = -1;
      for (int a = 0; a < 3; ++a)
        if (std::abs(std::abs(cp.pos_body[a]) - cuboid.half_extents[a]) <= 1e-9) on_face = a;
      if (on_face < 0) throw InvalidInput("GraspSpec: contact is not on the cuboid surface");
      for (int a = 0; a < 3; ++a)
        if (std::abs(cp.pos_body[a]) > cuboid.half_extents[a] + 1e-9)
          throw InvalidInput("GraspSpec: contact lies outside the cuboid");
      const double sign = cp.pos_body[on_face] > 0.0 ? 1.0 : -1.0;
      const Vec3 inward = -sign * Vec3::Unit(on_face);
      if ((cp.normal_body() - inward).norm() > 1e-9)
        throw InvalidInput("GraspSpec: contact normal is not the inward face normal");
      face_axis[c] = on_face;
      face_sign[c] = sign;
    }
    if (face_axis[0] != face_axis[1] || face_axis[1] != face_axis[2])
      throw InvalidInput("GraspSpec: contacts must lie on one pair of opposite faces");
    // Exactly one contact alone on its face; the pair is symmetric about the face center.
    for (int lone = 0; lone < 3; ++lone) {
      const int a = (lone + 1) % 3, b = (lone + 2) % 3;
      if (face_sign[a] == face_sign[b] && face_sign[lone] != face_sign[a]) {
        const int ax = face_axis[lone];
        auto in_face = [&](const Vec3& p) {
          Vec3 v = p;
          v[ax] = 0.0;
          return v.norm();
        };
        if (std::abs(in_face(contacts[a].pos_body) - in_face(contacts[b].pos_body)) > 1e-9)
          throw InvalidInput("GraspSpec: paired contacts are not equidistant from the face center");
        return;
      }
    }
    throw InvalidInput("GraspSpec: need one contact on one face and two on the opposite face");
  }
};

struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();

  Vec6 stacked() const {
    Vec6 w;
    w << force, torque;
    return w;
  }
};

/// Contact frame on the face whose outward normal is `outward` (a body axis direction).
inline Mat3 contact_frame(const Cuboid& cuboid, const Vec3& outward) {
  const Vec3 n = -outward;
  const Vec3 t0 = Vec3::Unit(cuboid.long_axis());
  Mat3 f;
  f.col(0) = t0;
  f.col(1) = n.cross(t0);
  f.col(2) = n;
  return f;
}

/// Pinch across the short axis: contact 0 centered on one long face, contacts 1 and 2
/// on the opposite face at +-spread along the long axis.
inline GraspSpec default_pinch_grasp(const Cuboid& cuboid, double spread) {
  const int la = cuboid.long_axis();
  const int pa = cuboid.pinch_axis();
  if (!(spread >= 0.0 && spread < cuboid.half_extents[la]))
    throw InvalidInput("default_pinch_grasp: spread must lie in [0, long half extent)");
  const double h = cuboid.half_extents[pa];
  GraspSpec g;
  const Vec3 minus = -Vec3::Unit(pa);
  const Vec3 plus = Vec3::Unit(pa);
  g.contacts[0].pos_body = h * minus;
  g.contacts[0].frame_body = contact_frame(cuboid, minus);
  for (int k = 0; k < 2; ++k) {
    ContactPoint& cp = g.contacts[1 + k];
    cp.pos_body = h * plus + (k == 0 ? spread : -spread) * Vec3::Unit(la);
    cp.frame_body = contact_frame(cuboid, plus);
  }
  return g;
}

/// Same contact layout rotated a half turn about the vertical body axis, so the
/// lone contact sits on the other long face.
inline GraspSpec mirrored_grasp(const Cuboid& cuboid, const GraspSpec& grasp) {
  const Mat3 flip = Eigen::AngleAxisd(kPi, Vec3::Unit(cuboid.vertical_axis())).toRotationMatrix();
  GraspSpec m = grasp;
  for (auto& cp : m.contacts) {
    cp.pos_body = flip * cp.pos_body;
    cp.frame_body = contact_frame(cuboid, -(flip * cp.normal_body()));
  }
  return m;
}

inline Vec3 contact_world_position(const ObjectPose& pose, const ContactPoint& cp) {
  return pose.to_world(cp.pos_body);
}

/// Greedy in finger order: each finger takes the nearest unused contact,
/// ties going to the lower contact index.
inline GraspSpec assign_faces(const RobotModel& model, const Vec9& q, const ObjectPose& pose,
                              const GraspSpec& grasp) {
  const Vec9 x = forward_kinematics(model, q);
  GraspSpec out = grasp;
  std::array<bool, 3> used{false, false, false};
  for (int f = 0; f < kNumFingers; ++f) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < 3; ++c) {
      if (used[c]) continue;
      const double d = (tip(x, f) - contact_world_position(pose, grasp.contacts[c])).norm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    used[best] = true;
    out.finger_assignment[f] = best;
  }
  return out;
}

/// Maps stacked contact-frame forces (ordered by contact index) to the world
/// wrench about the CoM.
inline Mat69 grasp_matrix(const ObjectPose& pose, const GraspSpec& grasp) {
  const Mat3 r = pose.rotation();
  Mat69 g;
  for (int c = 0; c < 3; ++c) {
    const Mat3 fw = r * grasp.contacts[c].frame_body;
    const Vec3 arm = r * grasp.contacts[c].pos_body;
    g.block<3, 3>(0, 3 * c) = fw;
    g.block<3, 3>(3, 3 * c) = skew(arm) * fw;
  }
  return g;
}

/// Contact-frame forces to per-finger world forces (finger f uses its assigned contact).
inline Vec9 contact_to_world_forces(const ObjectPose& pose, const GraspSpec& grasp,
                                    const Vec9& lambda_cf) {
  const Mat3 r = pose.rotation();
  Vec9 out;
  for (int f = 0; f < kNumFingers; ++f) {
    const int c = grasp.finger_assignment[f];
    out.segment<3>(3 * f) = r * grasp.contacts[c].frame_body * lambda_cf.segment<3>(3 * c);
  }
  return out;
}

inline Vec9 world_to_contact_forces(const ObjectPose& pose, const GraspSpec& grasp,
                                    const Vec9& finger_forces) {
  const Mat3 r = pose.rotation();
  Vec9 out;
  for (int f = 0; f < kNumFingers; ++f) {
    const int c = grasp.finger_assignment[f];
    out.segment<3>(3 * c) =
        (r * grasp.contacts[c].frame_body).transpose() * finger_forces.segment<3>(3 * f);
  }
  return out;
}

/// Linearized friction pyramid per contact: `sides` rows d_i . lambda_t - mu lambda_n,
/// then -lambda_n. Nonpositive entries mean inside the cone.
inline VecX friction_cone_residuals(const Vec9& lambda_cf, double mu, int sides) {
  if (!(mu > 0.0) || sides < 3) throw InvalidInput("friction_cone_residuals: need mu > 0, sides >= 3");
  VecX r(3 * (sides + 1));
  for (int c = 0; c < 3; ++c) {
    const Vec3 l = lambda_cf.segment<3>(3 * c);
    for (int i = 0; i < sides; ++i) {
      const double th = 2.0 * kPi * i / sides;
      r[c * (sides + 1) + i] = std::cos(th) * l.x() + std::sin(th) * l.y() - mu * l.z();
    }
    r[c * (sides + 1) + sides] = -l.z();
  }
  return r;
}

/// Row block of friction_cone_residuals for one contact as a linear map of its 3 forces.
inline MatX friction_cone_matrix(double mu, int sides) {
  MatX a(sides + 1, 3);
  for (int i = 0; i < sides; ++i) {
    const double th = 2.0 * kPi * i / sides;
    a.row(i) << std::cos(th), std::sin(th), -mu;
  }
  a.row(sides) << 0.0, 0.0, -1.0;
  return a;
}

inline Vec6 gravity_wrench(const Cuboid& cuboid, const Vec3& gravity) {
  Vec6 g = Vec6::Zero();
  g.head<3>() = cuboid.mass * gravity;
  return g;
}

/// Target contact force: `normal` on each contact's normal axis, zero tangential.
inline Vec9 normal_force_target(double normal) {
  Vec9 t = Vec9::Zero();
  for (int c = 0; c < 3; ++c) t[3 * c + 2] = normal;
  return t;
}

/// Contact forces closest to `target` that produce the wrench `desired` about the CoM.
inline Vec9 contact_forces_for_wrench(const ObjectPose& pose, const GraspSpec& grasp,
                                      const Vec6& desired, const Vec9& target) {
  const Mat69 g = grasp_matrix(pose, grasp);
  const Mat6 ggt = g * g.transpose();
  const Vec6 y = ggt.completeOrthogonalDecomposition().solve(desired - g * target);
  return target + g.transpose() * y;
}

/// Forces closest to `target` that balance gravity (G lambda = -g_obj).
inline Vec9 equilibrium_contact_forces(const Cuboid& cuboid, const ObjectPose& pose,
                                       const GraspSpec& grasp, const Vec3& gravity,
                                       const Vec9& target) {
  return contact_forces_for_wrench(pose, grasp, -gravity_wrench(cuboid, gravity), target);
}

}  // namespace dexprim
