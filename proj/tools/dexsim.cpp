// dexsim: run scored manipulation episodes and inspect transcribed problems.

#include "dexprim/cli.hpp"
#include "dexprim/collocation.hpp"
#include "dexprim/config.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace dexprim;

GoalSpec parse_goal(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidInput("--goal: '" + text + "' is not x,y,z[,yaw]");
    }
  }
  if (v.size() != 3 && v.size() != 4) throw InvalidInput("--goal: expected x,y,z[,yaw]");
  GoalSpec g;
  g.position = {v[0], v[1], v[2]};
  if (v.size() == 4) g.yaw = wrap_angle(v[3]);
  return g;
}

Config config_for(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

int dump_problem_command(const std::string& config_path, const std::string& kind) {
  const Config c = config_for(config_path);
  const PlannerConfig& pc = c.planner;
  const Vec9 q0 = defaults::home_configuration();
  const ObjectPose pose = resting_pose(c.cuboid, Vec3::Zero(), 0.0);
  const GraspSpec grasp = choose_grasp(c.robot, q0, c.cuboid, pose, pc.grasp_spread);
  if (kind == "fingertip") {
    const Vec9 goal = grasp_goals(pose, grasp, GraspStage::lower, pc.standoff);
    const KnotGrid grid = KnotGrid::uniform(pc.finger_knots, pc.finger_dt);
    const NlpProblem p = transcribe_fingertip(c.robot, q0, goal, grid, pc.finger_weights, pc.r_arena);
    std::cout << dump_problem(p, fingertip_warm_start(c.robot, q0, goal, grid)).dump(1) << '\n';
  } else {
    ObjectTranscriptionOptions opt = object_options(pc, pose.rotation(), c.sim.gravity, c.cuboid.friction);
    Vec6 o0, og;
    o0 << pose.position, Vec3::Zero();
    og << pose.position + Vec3(0.1, 0.0, 0.05), Vec3::Zero();
    const KnotGrid grid = KnotGrid::uniform(pc.reposition_knots, pc.reposition_dt);
    const NlpProblem p = transcribe_object(c.cuboid, grasp, o0, og, grid, pc.object_weights, opt);
    std::cout << dump_problem(p, object_warm_start(c.cuboid, grasp, o0, og, grid, pc.object_weights, opt)).dump(1)
              << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulate grasp, turn and reposition primitives on a desk-scale tri-finger hand."};
  app.set_help_all_flag("--help-all");

  RunSpec spec;
  std::vector<std::string> goal_text;
  std::string format = "table";
  app.add_option("--level", spec.level, "Difficulty level 1-4")->default_val(1);
  app.add_option("--goal", goal_text, "Explicit goal x,y,z[,yaw]; repeat for several goals");
  app.add_option("--goals", spec.goal_count, "Number of goals sampled from the seed")->default_val(1);
  app.add_option("--episodes", spec.episodes, "Episodes per goal, each from a random initial pose")->default_val(1);
  app.add_option("--seed", spec.seed, "Seed for goals and initial poses")->default_val(0);
  app.add_option("--duration", spec.duration, "Episode length in seconds (config default 120)");
  app.add_option("--config", spec.config_path, "JSON config overriding the defaults");
  app.add_option("--trace-out", spec.trace_out, "Trace file; suffixed _g<goal>_e<episode> for batches");
  app.add_option("--trace-stride", spec.trace_stride, "Record every n-th step in traces");
  app.add_option("--summary-format", format, "table or jsonl")->check(CLI::IsMember({"table", "jsonl"}));
  app.add_option("--jobs", spec.jobs, "Episodes run concurrently")->default_val(1);
  app.add_flag("--verbose", spec.verbose, "Print primitive and solver events to stderr");

  CLI::App* dump = app.add_subcommand("dump-problem", "Print a transcribed NLP at its warm start as JSON");
  std::string kind = "fingertip";
  dump->add_option("--kind", kind, "fingertip or object")->check(CLI::IsMember({"fingertip", "object"}));
  CLI::App* defaults_cmd = app.add_subcommand("default-config", "Print the built-in configuration as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*defaults_cmd) {
      std::cout << config_to_json(Config{}).dump(2) << '\n';
      return 0;
    }
    if (*dump) return dump_problem_command(spec.config_path, kind);

    spec.format = format == "jsonl" ? SummaryFormat::jsonl : SummaryFormat::table;
    for (const auto& g : goal_text) spec.goals.push_back(parse_goal(g));
    spec.validate();
    const Config config = config_for(spec.config_path);
    const BatchResult result = run_batch(config, spec);
    write_summary(std::cout, result, spec.format);
    for (const auto& e : result.episodes)
      if (e.failed) std::cerr << "goal " << e.goal_index << " episode " << e.episode << " failed: " << e.failure << '\n';
    return exit_status(result);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
