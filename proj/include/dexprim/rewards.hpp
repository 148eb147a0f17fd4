#pragma once

#include "dexprim/common.hpp"

namespace dexprim {

/// Thresholds of the piecewise shaping rewards. The inner thresholds are where the
/// reward leaves its plateau of 1, the outer ones where it drops to 0.
struct RewardParams {
  double pos_inner = 0.05;
  double pos_outer = 0.075;
  double ori_inner = kPi / 8.0;
  double ori_outer = 3.0 * kPi / 16.0;

  void validate() const {
    if (!(0.0 < pos_inner && pos_inner < pos_outer) || !std::isfinite(pos_outer))
      throw InvalidInput("RewardParams: need 0 < pos_inner < pos_outer");
    if (!(0.0 < ori_inner && ori_inner < ori_outer) || !std::isfinite(ori_outer))
      throw InvalidInput("RewardParams: need 0 < ori_inner < ori_outer");
  }
};

/// Position reward. The middle branch is 1 / (9 (20 d)^2 + 1) and is not continuous
/// with the plateau; d equal to either threshold falls to 0.
inline double r_pos(double d, const RewardParams& params = {}) {
  params.validate();
  if (!(d >= 0.0) || !std::isfinite(d)) throw InvalidInput("r_pos: distance must be finite and >= 0");
  if (d < params.pos_inner) return 1.0;
  if (params.pos_inner < d && d < params.pos_outer) {
    const double s = 20.0 * d;
    return 1.0 / (9.0 * s * s + 1.0);
  }
  return 0.0;
}

/// Orientation reward on an absolute yaw error, middle branch 1 / (9 (pi d / 8)^2 + 1).
inline double r_ori(double d, const RewardParams& params = {}) {
  params.validate();
  if (!(d >= 0.0) || !std::isfinite(d)) throw InvalidInput("r_ori: angle must be finite and >= 0");
  if (d < params.ori_inner) return 1.0;
  if (params.ori_inner < d && d < params.ori_outer) {
    const double s = kPi * d / 8.0;
    return 1.0 / (9.0 * s * s + 1.0);
  }
  return 0.0;
}

/// r_pos of the position distance plus r_ori of the yaw difference wrapped to [0, pi].
inline double composite_reward(const Vec3& o_pos, double o_yaw, const Vec3& g_pos, double g_yaw,
                               const RewardParams& params = {}) {
  require_finite(o_pos, "composite_reward o_pos");
  require_finite(g_pos, "composite_reward g_pos");
  if (!std::isfinite(o_yaw) || !std::isfinite(g_yaw)) throw InvalidInput("composite_reward: yaw must be finite");
  return r_pos((o_pos - g_pos).norm(), params) + r_ori(std::abs(wrap_angle(o_yaw - g_yaw)), params);
}

struct SurrogateSample {
  double ratio = 1.0;  // new over old action probability
  double advantage = 0.0;
  double epsilon = 0.2;

  void validate() const {
    if (!(ratio > 0.0) || !std::isfinite(ratio)) throw InvalidInput("SurrogateSample: ratio must be > 0");
    if (!std::isfinite(advantage)) throw InvalidInput("SurrogateSample: advantage must be finite");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidInput("SurrogateSample: epsilon must lie in (0, 1)");
  }
};

/// min(ratio A, clip(ratio, 1 - eps, 1 + eps) A).
inline double ppo_clip_objective(const SurrogateSample& s) {
  s.validate();
  const double clipped = std::clamp(s.ratio, 1.0 - s.epsilon, 1.0 + s.epsilon);
  return std::min(s.ratio * s.advantage, clipped * s.advantage);
}

}  // namespace dexprim
