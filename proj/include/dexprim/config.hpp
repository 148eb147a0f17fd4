#pragma once

#include "dexprim/controller.hpp"
#include "dexprim/planner.hpp"
#include "dexprim/sim.hpp"

#include <json.hpp>

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace dexprim {

struct EpisodeConfig {
  double duration = 120.0;
  double initial_radius = 0.04;  // initial position uniform within this disc around the centre
  int record_stride = 1;

  void validate() const {
    if (!(duration > 0.0) || !std::isfinite(duration)) throw InvalidInput("episode: duration must be positive");
    if (!(initial_radius >= 0.0)) throw InvalidInput("episode: initial_radius must be >= 0");
    if (record_stride < 1) throw InvalidInput("episode: record_stride must be >= 1");
  }
};

/// Everything a run needs. The simulator's gravity is also used by the robot model
/// and the planner.
struct Config {
  RobotModel robot = defaults::robot_model();
  Cuboid cuboid;
  ImpedanceGains controller;
  SimConfig sim;
  ScoreWeights score;
  PlannerConfig planner;
  EpisodeConfig episode;

  void validate() const {
    robot.validate();
    cuboid.validate();
    controller.validate();
    sim.validate();
    planner.validate();
    episode.validate();
    if (!(score.yaw >= 0.0)) throw InvalidInput("score: yaw_weight must be >= 0");
  }
};

namespace config_detail {

using nlohmann::json;

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

inline void only_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) fail(path, "unknown key '" + k + "'");
  }
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "expected a finite number");
  return v;
}

inline void read(const json& j, const char* key, const std::string& path, double& out) {
  if (j.contains(key)) out = number(j.at(key), path + "." + key);
}

inline void read(const json& j, const char* key, const std::string& path, int& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
  out = v.get<int>();
}

inline void read(const json& j, const char* key, const std::string& path, bool& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_boolean()) fail(path + "." + key, "expected true or false");
  out = v.get<bool>();
}

/// A fixed-size vector, or a single number broadcast to every entry.
template <int N>
void read(const json& j, const char* key, const std::string& path, Eigen::Matrix<double, N, 1>& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string p = path + "." + key;
  if (v.is_number()) {
    out.setConstant(number(v, p));
    return;
  }
  if (!v.is_array() || v.size() != static_cast<size_t>(N)) fail(p, "expected " + std::to_string(N) + " numbers");
  for (int i = 0; i < N; ++i) out[i] = number(v[i], p + "[" + std::to_string(i) + "]");
}

/// A square matrix as a list of rows, or as its diagonal.
inline void read_matrix(const json& j, const char* key, const std::string& path, MatX& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string p = path + "." + key;
  const auto n = static_cast<Eigen::Index>(out.rows());
  if (!v.is_array() || v.size() != static_cast<size_t>(n)) fail(p, "expected " + std::to_string(n) + " entries");
  if (v[0].is_number()) {
    out.setZero();
    for (Eigen::Index i = 0; i < n; ++i) out(i, i) = number(v[i], p);
    return;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!v[i].is_array() || v[i].size() != static_cast<size_t>(n)) fail(p, "rows must have " + std::to_string(n) + " entries");
    for (Eigen::Index c = 0; c < n; ++c) out(i, c) = number(v[i][c], p);
  }
}

inline void read_transform(const json& j, const char* key, const std::string& path, Transform& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string p = path + "." + key;
  only_keys(v, p, {"xyz", "rpy"});
  Vec3 xyz = out.translation();
  Vec3 rpy = matrix_to_rpy(out.linear());
  read(v, "xyz", p, xyz);
  read(v, "rpy", p, rpy);
  out = make_transform(xyz, rpy);
}

inline json to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
template <int N>
json to_json(const Eigen::Matrix<double, N, 1>& v) {
  json a = json::array();
  for (int i = 0; i < N; ++i) a.push_back(v[i]);
  return a;
}
inline json to_json(const Transform& t) {
  return {{"xyz", to_json(Vec3(t.translation()))}, {"rpy", to_json(matrix_to_rpy(t.linear()))}};
}
inline json matrix_json(const MatX& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) r.push_back(m(i, c));
    rows.push_back(r);
  }
  return rows;
}

inline void read_finger(const json& j, const std::string& p, FingerChain& f) {
  only_keys(j, p,
            {"base_pose", "joint_axes", "link_offsets", "tip_offset", "joint_lower", "joint_upper", "vel_limit",
             "link_masses", "link_coms", "torque_limit"});
  read_transform(j, "base_pose", p, f.base_pose);
  read_transform(j, "tip_offset", p, f.tip_offset);
  for (const char* key : {"joint_axes", "link_offsets", "link_coms"}) {
    if (!j.contains(key)) continue;
    const json& a = j.at(key);
    const std::string pk = p + "." + key;
    if (!a.is_array() || a.size() != 3) fail(pk, "expected 3 entries");
    for (int i = 0; i < 3; ++i) {
      json wrap = {{"v", a[i]}};
      const std::string pi = pk + "[" + std::to_string(i) + "]";
      if (std::string(key) == "joint_axes") {
        read(wrap, "v", pi, f.joint_axes[i]);
        if (!(f.joint_axes[i].norm() > 0.0)) fail(pi, "axis must be nonzero");
        f.joint_axes[i].normalize();
      } else if (std::string(key) == "link_coms") {
        read(wrap, "v", pi, f.link_coms[i]);
      } else {
        read_transform(wrap, "v", pi, f.link_offsets[i]);
      }
    }
  }
  read(j, "joint_lower", p, f.joint_lower);
  read(j, "joint_upper", p, f.joint_upper);
  read(j, "vel_limit", p, f.vel_limit);
  read(j, "link_masses", p, f.link_masses);
  read(j, "torque_limit", p, f.torque_limit);
}

inline json finger_json(const FingerChain& f) {
  json j;
  j["base_pose"] = to_json(f.base_pose);
  j["joint_axes"] = json::array();
  j["link_offsets"] = json::array();
  j["link_coms"] = json::array();
  for (int i = 0; i < 3; ++i) {
    j["joint_axes"].push_back(to_json(f.joint_axes[i]));
    j["link_offsets"].push_back(to_json(f.link_offsets[i]));
    j["link_coms"].push_back(to_json(f.link_coms[i]));
  }
  j["tip_offset"] = to_json(f.tip_offset);
  j["joint_lower"] = to_json(f.joint_lower);
  j["joint_upper"] = to_json(f.joint_upper);
  j["vel_limit"] = to_json(f.vel_limit);
  j["link_masses"] = to_json(f.link_masses);
  j["torque_limit"] = f.torque_limit;
  return j;
}

inline void read_weights(const json& j, const std::string& p, TrajOptWeights& w, bool object) {
  if (object)
    only_keys(j, p, {"Q", "R", "slack_weight", "lambda_target_normal"});
  else
    only_keys(j, p, {"Q", "R", "slack_weight", "knots", "dt"});
  read_matrix(j, "Q", p, w.Q);
  read_matrix(j, "R", p, w.R);
  read(j, "slack_weight", p, w.slack_weight);
  if (object) read(j, "lambda_target_normal", p, w.lambda_target_normal);
}

}  // namespace config_detail

/// Overrides `base` with the keys present in `j`. Unknown keys, wrong types and values
/// that fail validation all raise ConfigError.
inline Config config_from_json(const nlohmann::json& j, Config base = {}) {
  using namespace config_detail;
  Config c = std::move(base);
  only_keys(j, "config", {"robot", "cuboid", "controller", "sim", "score", "trajopt", "solver", "planner", "episode"});

  if (j.contains("robot")) {
    const json& r = j.at("robot");
    only_keys(r, "robot", {"fingers"});
    if (r.contains("fingers")) {
      const json& f = r.at("fingers");
      if (!f.is_array() || f.size() != 3) fail("robot.fingers", "expected 3 fingers");
      for (int i = 0; i < 3; ++i) read_finger(f[i], "robot.fingers[" + std::to_string(i) + "]", c.robot.fingers[i]);
    }
  }
  if (j.contains("cuboid")) {
    const json& o = j.at("cuboid");
    only_keys(o, "cuboid", {"half_extents", "mass", "friction", "inertia"});
    read(o, "half_extents", "cuboid", c.cuboid.half_extents);
    read(o, "mass", "cuboid", c.cuboid.mass);
    read(o, "friction", "cuboid", c.cuboid.friction);
    if (o.contains("inertia")) {
      MatX m = c.cuboid.inertia;
      read_matrix(o, "inertia", "cuboid", m);
      c.cuboid.inertia = m;
    } else {
      c.cuboid.inertia = Cuboid::box_inertia(c.cuboid.half_extents, c.cuboid.mass);
    }
  }
  if (j.contains("controller")) {
    const json& g = j.at("controller");
    only_keys(g, "controller", {"kp", "kv", "torque_limit"});
    read(g, "kp", "controller", c.controller.kp);
    read(g, "kv", "controller", c.controller.kv);
    read(g, "torque_limit", "controller", c.controller.torque_limit);
  }
  if (j.contains("sim")) {
    const json& s = j.at("sim");
    only_keys(s, "sim", {"dt", "joint_inertia", "table_friction", "attach_tolerance", "gravity"});
    read(s, "dt", "sim", c.sim.dt);
    read(s, "joint_inertia", "sim", c.sim.joint_inertia);
    read(s, "table_friction", "sim", c.sim.table_friction);
    read(s, "attach_tolerance", "sim", c.sim.attach_tolerance);
    read(s, "gravity", "sim", c.sim.gravity);
  }
  if (j.contains("score")) {
    only_keys(j.at("score"), "score", {"yaw_weight"});
    read(j.at("score"), "yaw_weight", "score", c.score.yaw);
  }
  PlannerConfig& pc = c.planner;
  if (j.contains("trajopt")) {
    const json& t = j.at("trajopt");
    only_keys(t, "trajopt",
              {"fingertip", "object", "turn", "reposition", "friction_cones", "cone_sides",
               "equilibrium_force_target", "terminal_rest"});
    if (t.contains("fingertip")) {
      read_weights(t.at("fingertip"), "trajopt.fingertip", pc.finger_weights, false);
      read(t.at("fingertip"), "knots", "trajopt.fingertip", pc.finger_knots);
      read(t.at("fingertip"), "dt", "trajopt.fingertip", pc.finger_dt);
    }
    if (t.contains("object")) read_weights(t.at("object"), "trajopt.object", pc.object_weights, true);
    for (const char* key : {"turn", "reposition"}) {
      if (!t.contains(key)) continue;
      const std::string p = std::string("trajopt.") + key;
      only_keys(t.at(key), p, {"knots", "dt"});
      const bool turn = std::string(key) == "turn";
      read(t.at(key), "knots", p, turn ? pc.turn_knots : pc.reposition_knots);
      read(t.at(key), "dt", p, turn ? pc.turn_dt : pc.reposition_dt);
    }
    read(t, "friction_cones", "trajopt", pc.friction_cones);
    read(t, "cone_sides", "trajopt", pc.cone_sides);
    read(t, "equilibrium_force_target", "trajopt", pc.equilibrium_force_target);
    read(t, "terminal_rest", "trajopt", pc.terminal_rest);
  }
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    only_keys(s, "solver",
              {"feas_tol", "stat_tol", "compl_tol", "max_outer", "max_inner", "initial_penalty", "penalty_growth",
               "max_penalty", "multiplier_bound"});
    SolverConfig& sc = pc.solver;
    read(s, "feas_tol", "solver", sc.feas_tol);
    read(s, "stat_tol", "solver", sc.stat_tol);
    read(s, "compl_tol", "solver", sc.compl_tol);
    read(s, "max_outer", "solver", sc.max_outer);
    read(s, "max_inner", "solver", sc.max_inner);
    read(s, "initial_penalty", "solver", sc.initial_penalty);
    read(s, "penalty_growth", "solver", sc.penalty_growth);
    read(s, "max_penalty", "solver", sc.max_penalty);
    read(s, "multiplier_bound", "solver", sc.multiplier_bound);
  }
  if (j.contains("planner")) {
    const json& p = j.at("planner");
    only_keys(p, "planner",
              {"yaw_threshold", "turn_increment", "yaw_symmetry", "max_retries", "standoff", "grasp_spread",
               "axis_clearance", "r_arena", "resting_tolerance", "settle_time",
               "pinch_normal_force", "accept_violation"});
    read(p, "yaw_threshold", "planner", pc.yaw_threshold);
    read(p, "turn_increment", "planner", pc.turn_increment);
    read(p, "yaw_symmetry", "planner", pc.yaw_symmetry);
    read(p, "max_retries", "planner", pc.max_retries);
    read(p, "standoff", "planner", pc.standoff);
    read(p, "grasp_spread", "planner", pc.grasp_spread);
    read(p, "axis_clearance", "planner", pc.axis_clearance);
    read(p, "r_arena", "planner", pc.r_arena);
    read(p, "resting_tolerance", "planner", pc.resting_tolerance);
    read(p, "settle_time", "planner", pc.settle_time);
    read(p, "pinch_normal_force", "planner", pc.pinch_normal_force);
    read(p, "accept_violation", "planner", pc.accept_violation);
  }
  if (j.contains("episode")) {
    const json& e = j.at("episode");
    only_keys(e, "episode", {"duration", "initial_radius", "record_stride"});
    read(e, "duration", "episode", c.episode.duration);
    read(e, "initial_radius", "episode", c.episode.initial_radius);
    read(e, "record_stride", "episode", c.episode.record_stride);
  }
  c.robot.gravity = c.sim.gravity;
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline nlohmann::json config_to_json(const Config& c) {
  using namespace config_detail;
  json j;
  for (const auto& f : c.robot.fingers) j["robot"]["fingers"].push_back(finger_json(f));
  j["cuboid"] = {{"half_extents", to_json(c.cuboid.half_extents)},
                 {"mass", c.cuboid.mass},
                 {"friction", c.cuboid.friction},
                 {"inertia", matrix_json(c.cuboid.inertia)}};
  j["controller"] = {{"kp", to_json(c.controller.kp)},
                     {"kv", to_json(c.controller.kv)},
                     {"torque_limit", c.controller.torque_limit}};
  j["sim"] = {{"dt", c.sim.dt},
              {"joint_inertia", to_json(c.sim.joint_inertia)},
              {"table_friction", c.sim.table_friction},
              {"attach_tolerance", c.sim.attach_tolerance},
              {"gravity", to_json(c.sim.gravity)}};
  j["score"] = {{"yaw_weight", c.score.yaw}};
  const PlannerConfig& p = c.planner;
  j["trajopt"] = {
      {"fingertip",
       {{"Q", matrix_json(p.finger_weights.Q)},
        {"R", matrix_json(p.finger_weights.R)},
        {"slack_weight", p.finger_weights.slack_weight},
        {"knots", p.finger_knots},
        {"dt", p.finger_dt}}},
      {"object",
       {{"Q", matrix_json(p.object_weights.Q)},
        {"R", matrix_json(p.object_weights.R)},
        {"slack_weight", p.object_weights.slack_weight},
        {"lambda_target_normal", p.object_weights.lambda_target_normal}}},
      {"turn", {{"knots", p.turn_knots}, {"dt", p.turn_dt}}},
      {"reposition", {{"knots", p.reposition_knots}, {"dt", p.reposition_dt}}},
      {"friction_cones", p.friction_cones},
      {"cone_sides", p.cone_sides},
      {"equilibrium_force_target", p.equilibrium_force_target},
      {"terminal_rest", p.terminal_rest}};
  const SolverConfig& s = p.solver;
  j["solver"] = {{"feas_tol", s.feas_tol},
                 {"stat_tol", s.stat_tol},
                 {"compl_tol", s.compl_tol},
                 {"max_outer", s.max_outer},
                 {"max_inner", s.max_inner},
                 {"initial_penalty", s.initial_penalty},
                 {"penalty_growth", s.penalty_growth},
                 {"max_penalty", s.max_penalty},
                 {"multiplier_bound", s.multiplier_bound}};
  j["planner"] = {{"yaw_threshold", p.yaw_threshold},
                  {"turn_increment", p.turn_increment},
                  {"yaw_symmetry", p.yaw_symmetry},
                  {"max_retries", p.max_retries},
                  {"standoff", p.standoff},
                  {"grasp_spread", p.grasp_spread},
                  {"axis_clearance", p.axis_clearance},
                  {"r_arena", p.r_arena},
                  {"resting_tolerance", p.resting_tolerance},
                  {"settle_time", p.settle_time},
                  {"pinch_normal_force", p.pinch_normal_force},
                  {"accept_violation", p.accept_violation}};
  j["episode"] = {{"duration", c.episode.duration},
                  {"initial_radius", c.episode.initial_radius},
                  {"record_stride", c.episode.record_stride}};
  return j;
}

inline Config parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace dexprim
