#pragma once

#include "dexprim/collocation.hpp"
#include "dexprim/common.hpp"
#include "dexprim/nlp.hpp"
#include "dexprim/robot_model.hpp"

#include <random>

namespace dexprim::test {

inline std::mt19937_64 rng(uint64_t seed) { return std::mt19937_64(seed); }

inline double uniform(std::mt19937_64& gen, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(gen);
}

template <int N>
Eigen::Matrix<double, N, 1> uniform_vec(std::mt19937_64& gen, double lo, double hi) {
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = uniform(gen, lo, hi);
  return v;
}

inline Mat3 random_rotation(std::mt19937_64& gen) {
  Eigen::Quaterniond q(uniform(gen, -1, 1), uniform(gen, -1, 1), uniform(gen, -1, 1), uniform(gen, -1, 1));
  q.normalize();
  return q.toRotationMatrix();
}

/// Joint angles inside the default limits, away from the clamps.
inline Vec9 random_q(std::mt19937_64& gen) { return uniform_vec<9>(gen, -2.5, 2.5); }

inline RobotModel zero_gravity_model() {
  RobotModel m = defaults::robot_model();
  m.gravity.setZero();
  return m;
}

/// Convex equality QP: min 1/2 z'Hz + g'z s.t. Az = b, with its KKT solution.
struct EqualityQp {
  MatX H, A;
  VecX g, b;
  VecX z_star, mult_star;

  NlpProblem problem() const {
    NlpProblem p;
    p.n_vars = static_cast<int>(g.size());
    p.n_eq = static_cast<int>(b.size());
    const double inf = std::numeric_limits<double>::infinity();
    p.lower = VecX::Constant(p.n_vars, -inf);
    p.upper = VecX::Constant(p.n_vars, inf);
    const MatX h = H, a = A;
    const VecX gg = g, bb = b;
    p.cost = [=](const VecX& z) { return 0.5 * z.dot(h * z) + gg.dot(z); };
    p.cost_gradient = [=](const VecX& z) -> VecX { return h * z + gg; };
    p.lagrangian_hessian = [=](const VecX&, const VecX&, const VecX&) -> MatX { return h; };
    p.eq = [=](const VecX& z) -> VecX { return a * z - bb; };
    p.eq_jacobian = [=](const VecX&) -> MatX { return a; };
    return p;
  }

  double cost_at(const VecX& z) const { return 0.5 * z.dot(H * z) + g.dot(z); }
};

/// Direct solve of [H A'; A 0] [z; y] = [-g; b].
inline void solve_kkt(EqualityQp& qp) {
  const int n = static_cast<int>(qp.g.size()), m = static_cast<int>(qp.b.size());
  MatX k = MatX::Zero(n + m, n + m);
  k.topLeftCorner(n, n) = qp.H;
  k.topRightCorner(n, m) = qp.A.transpose();
  k.bottomLeftCorner(m, n) = qp.A;
  VecX rhs(n + m);
  rhs << -qp.g, qp.b;
  const VecX sol = k.fullPivLu().solve(rhs);
  qp.z_star = sol.head(n);
  qp.mult_star = sol.tail(m);
}

inline EqualityQp random_equality_qp(std::mt19937_64& gen, int n, int m) {
  EqualityQp qp;
  MatX l(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) l(i, j) = uniform(gen, -1, 1);
  qp.H = l * l.transpose() / n + MatX::Identity(n, n);
  qp.A.resize(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) qp.A(i, j) = uniform(gen, -1, 1);
  qp.g.resize(n);
  qp.b.resize(m);
  for (int i = 0; i < n; ++i) qp.g[i] = uniform(gen, -1, 1);
  for (int i = 0; i < m; ++i) qp.b[i] = uniform(gen, -1, 1);
  solve_kkt(qp);
  return qp;
}

/// Largest trapezoidal pose and twist defect of an object solution, evaluated from
/// the rigid-body equations rather than the transcription's callbacks.
inline double object_defects(const Cuboid& cuboid, const GraspSpec& grasp, const Mat3& reference_rotation,
                             const Vec3& gravity, const TrajectorySolution& s) {
  const Mat3 inv_i = cuboid.inertia.inverse();
  double worst = 0.0;
  for (int k = 0; k < s.grid.T; ++k) {
    const double h = s.grid.step(k);
    auto accel = [&](const VecX& o) {
      const Mat3 r = rpy_to_matrix(o.tail<3>()) * reference_rotation;
      Vec3 f = Vec3::Zero(), tau = Vec3::Zero();
      for (int c = 0; c < 3; ++c) {
        const Vec3 fb = grasp.contacts[c].frame_body * s.input[k].segment<3>(3 * c);
        f += fb;
        tau += grasp.contacts[c].pos_body.cross(fb);
      }
      Vec6 a;
      a << r * f / cuboid.mass + gravity, r * (inv_i * tau);
      return a;
    };
    const VecX dp = s.state[k + 1] - s.state[k] - 0.5 * h * (s.rate[k + 1] + s.rate[k]);
    const VecX dv = s.rate[k + 1] - s.rate[k] - 0.5 * h * (accel(s.state[k + 1]) + accel(s.state[k]));
    worst = std::max({worst, dp.cwiseAbs().maxCoeff(), dv.cwiseAbs().maxCoeff()});
  }
  return worst;
}

}  // namespace dexprim::test
