#pragma once

#include "dexprim/config.hpp"
#include "dexprim/planner.hpp"
#include "dexprim/sim.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <thread>

namespace dexprim {

enum class SummaryFormat { table, jsonl };

struct RunSpec {
  int level = 1;
  std::vector<GoalSpec> goals;  // explicit goals; sampled from the seed when empty
  int goal_count = 1;
  int episodes = 1;
  std::uint64_t seed = 0;
  std::optional<double> duration;  // overrides the config when set
  std::optional<int> trace_stride;
  std::string config_path;
  std::string trace_out;
  SummaryFormat format = SummaryFormat::table;
  int jobs = 1;
  bool verbose = false;

  void validate() const {
    if (level < 1 || level > 4) throw InvalidInput("level must be 1-4");
    if (episodes < 1) throw InvalidInput("episode count must be >= 1");
    if (goals.empty() && goal_count < 1) throw InvalidInput("goal count must be >= 1");
    if (duration && !(*duration > 0.0)) throw InvalidInput("duration must be positive");
    if (trace_stride && *trace_stride < 1) throw InvalidInput("trace stride must be >= 1");
    if (jobs < 1) throw InvalidInput("jobs must be >= 1");
  }
};

/// Uniform double in [0, 1) from the top 53 bits, identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Generator for one (seed, stream...) combination.
inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::initializer_list<std::uint32_t> stream) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  words.insert(words.end(), stream.begin(), stream.end());
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

inline Vec3 uniform_in_disc(std::mt19937_64& rng, double radius) {
  const double r = radius * std::sqrt(uniform01(rng));
  const double a = 2.0 * kPi * uniform01(rng);
  return {r * std::cos(a), r * std::sin(a), 0.0};
}

inline double uniform_yaw(std::mt19937_64& rng) {
  const double y = kPi - 2.0 * kPi * uniform01(rng);  // (-pi, pi]
  return y;
}

/// Level 1: table disc of radius 0.10 m at rest height. Level 2: fixed point 8 cm up.
/// Level 3: cylinder of radius 0.10 m, height between rest and 0.10 m. Level 4: level 3
/// plus a uniform yaw.
inline GoalSpec sample_goal(int level, std::uint64_t seed, double rest_height = Cuboid{}.rest_height()) {
  if (level < 1 || level > 4) throw InvalidInput("sample_goal: level must be 1-4");
  GoalSpec g;
  g.level = level;
  std::mt19937_64 rng = seeded_rng(seed, {0x60a1u});
  if (level == 2) {
    g.position = {0.0, 0.0, 0.08};
    return g;
  }
  g.position = uniform_in_disc(rng, 0.10);
  g.position.z() = level == 1 ? rest_height : rest_height + (0.10 - rest_height) * uniform01(rng);
  if (level == 4) g.yaw = uniform_yaw(rng);
  return g;
}

inline ObjectPose sample_initial_pose(const Cuboid& cuboid, std::uint64_t seed, double radius) {
  std::mt19937_64 rng = seeded_rng(seed, {0x1417u});
  const Vec3 xy = uniform_in_disc(rng, radius);
  return resting_pose(cuboid, xy, uniform_yaw(rng));
}

/// Middle element for odd counts, mean of the middle two for even counts.
inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median: empty sample");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct EpisodeSummary {
  int level = 1;
  int goal_index = 0;
  int episode = 0;
  GoalSpec goal;
  std::uint64_t seed = 0;
  double score = 0.0;
  double final_position_error = 0.0;
  double final_yaw_error = 0.0;
  bool failed = false;
  std::string failure;
  int steps = 0;
};

struct GoalSummary {
  int goal_index = 0;
  GoalSpec goal;
  std::vector<std::uint64_t> seeds;
  std::vector<double> scores;
  double median_score = 0.0;
  double median_position_error = 0.0;
  double median_yaw_error = 0.0;
  int failures = 0;
};

struct BatchResult {
  std::vector<EpisodeSummary> episodes;
  std::vector<GoalSummary> goals;
  bool any_failed() const {
    return std::any_of(episodes.begin(), episodes.end(), [](const EpisodeSummary& e) { return e.failed; });
  }
};

/// Seed of episode e on goal g: a fixed mix of the run seed, so episodes are
/// independent of scheduling.
inline std::uint64_t episode_seed(std::uint64_t seed, int goal_index, int episode) {
  std::mt19937_64 rng = seeded_rng(seed, {0xe915u, static_cast<std::uint32_t>(goal_index),
                                          static_cast<std::uint32_t>(episode)});
  return rng();
}

inline std::string trace_path(const std::string& base, int goal_index, int episode, bool single) {
  if (single) return base;
  const std::filesystem::path p(base);
  const std::string name = p.stem().string() + "_g" + std::to_string(goal_index) + "_e" + std::to_string(episode) +
                           p.extension().string();
  return (p.parent_path() / name).string();
}

inline EpisodeSummary run_one(const Config& config, const RunSpec& spec, const GoalSpec& goal, int goal_index,
                              int episode, std::ostream* events) {
  EpisodeSummary s;
  s.level = spec.level;
  s.goal_index = goal_index;
  s.episode = episode;
  s.goal = goal;
  s.seed = episode_seed(spec.seed, goal_index, episode);

  EpisodeSetup setup;
  setup.sim = config.sim;
  setup.gains = config.controller;
  setup.score = config.score;
  setup.goal = goal;
  setup.initial_pose = sample_initial_pose(config.cuboid, s.seed, config.episode.initial_radius);
  setup.duration = spec.duration.value_or(config.episode.duration);
  setup.record_stride = spec.trace_stride.value_or(config.episode.record_stride);

  EpisodeResult r;
  try {
    PrimitivePlanner planner(config.robot, config.cuboid, goal, config.planner, config.sim.gravity);
    r = run_episode(config.robot, config.cuboid, setup, planner);
  } catch (const std::exception& e) {
    r.failed = true;
    r.failure = e.what();
    r.final_object.pose = setup.initial_pose;
  }
  s.score = r.score.total;
  s.final_position_error = (r.final_object.pose.position - goal.position).norm();
  s.final_yaw_error = final_yaw_error(config.cuboid, r.final_object.pose, goal);
  s.failed = r.failed;
  s.failure = r.failure;
  s.steps = r.steps;
  if (events)
    for (const auto& e : r.trace.events)
      *events << "goal " << goal_index << " episode " << episode << " t=" << e.time << " " << e.name << " "
              << e.detail << '\n';
  if (!spec.trace_out.empty()) {
    const bool single = spec.episodes == 1 && (spec.goals.empty() ? spec.goal_count : spec.goals.size()) == 1;
    const std::string path = trace_path(spec.trace_out, goal_index, episode, single);
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write trace file " + path);
    write_trace(out, config.cuboid, r);
  }
  return s;
}

inline std::vector<GoalSpec> batch_goals(const Config& config, const RunSpec& spec) {
  if (!spec.goals.empty()) {
    std::vector<GoalSpec> goals = spec.goals;
    for (auto& g : goals) {
      g.level = spec.level;
      g.validate();
    }
    return goals;
  }
  std::vector<GoalSpec> goals;
  for (int i = 0; i < spec.goal_count; ++i) {
    std::mt19937_64 rng = seeded_rng(spec.seed, {0x90a1u, static_cast<std::uint32_t>(i)});
    goals.push_back(sample_goal(spec.level, rng(), config.cuboid.rest_height()));
  }
  return goals;
}

/// Runs every (goal, episode) pair on up to spec.jobs threads. Results are ordered by
/// goal then episode regardless of scheduling.
inline BatchResult run_batch(const Config& config, const RunSpec& spec) {
  spec.validate();
  const std::vector<GoalSpec> goals = batch_goals(config, spec);
  const int n = static_cast<int>(goals.size()) * spec.episodes;
  BatchResult out;
  out.episodes.resize(n);
  std::vector<std::string> logs(n);
  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        std::ostringstream log;
        out.episodes[i] =
            run_one(config, spec, goals[i / spec.episodes], i / spec.episodes, i % spec.episodes,
                    spec.verbose ? &log : nullptr);
        logs[i] = log.str();
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int threads = std::min(spec.jobs, n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  if (spec.verbose)
    for (const auto& l : logs) std::cerr << l;

  for (size_t g = 0; g < goals.size(); ++g) {
    GoalSummary gs;
    gs.goal_index = static_cast<int>(g);
    gs.goal = goals[g];
    std::vector<double> pos, yaw;
    for (int e = 0; e < spec.episodes; ++e) {
      const EpisodeSummary& s = out.episodes[g * spec.episodes + e];
      gs.seeds.push_back(s.seed);
      gs.scores.push_back(s.score);
      pos.push_back(s.final_position_error);
      yaw.push_back(std::abs(s.final_yaw_error));
      gs.failures += s.failed;
    }
    gs.median_score = median(gs.scores);
    gs.median_position_error = median(pos);
    gs.median_yaw_error = median(yaw);
    out.goals.push_back(gs);
  }
  return out;
}

inline void write_summary(std::ostream& os, const BatchResult& r, SummaryFormat format) {
  using nlohmann::json;
  if (format == SummaryFormat::jsonl) {
    for (const auto& e : r.episodes) {
      json j = {{"record", "episode"},
                {"level", e.level},
                {"goal_index", e.goal_index},
                {"episode", e.episode},
                {"goal", {e.goal.position.x(), e.goal.position.y(), e.goal.position.z(), e.goal.yaw}},
                {"seed", e.seed},
                {"score", e.score},
                {"final_position_error", e.final_position_error},
                {"final_yaw_error", e.final_yaw_error},
                {"status", e.failed ? "failed" : "ok"}};
      if (e.failed) j["failure"] = e.failure;
      os << j.dump() << '\n';
    }
    for (const auto& g : r.goals) {
      json j = {{"record", "goal"},
                {"level", g.goal.level},
                {"goal_index", g.goal_index},
                {"goal", {g.goal.position.x(), g.goal.position.y(), g.goal.position.z(), g.goal.yaw}},
                {"seeds", g.seeds},
                {"scores", g.scores},
                {"median_score", g.median_score},
                {"median_final_position_error", g.median_position_error},
                {"median_final_yaw_error", g.median_yaw_error},
                {"failures", g.failures}};
      os << j.dump() << '\n';
    }
    return;
  }
  char line[512];
  std::snprintf(line, sizeof line, "%-5s %-4s %-34s %-8s %-14s %-12s %-12s %s\n", "level", "goal", "goal (x y z yaw)",
                "episodes", "median_score", "median_pos_m", "median_yaw", "failed");
  os << line;
  for (const auto& g : r.goals) {
    char coords[64];
    std::snprintf(coords, sizeof coords, "%.4f %.4f %.4f %.4f", g.goal.position.x(), g.goal.position.y(),
                  g.goal.position.z(), g.goal.yaw);
    std::snprintf(line, sizeof line, "%-5d %-4d %-34s %-8zu %-14.4f %-12.6f %-12.6f %d\n", g.goal.level, g.goal_index,
                  coords, g.scores.size(), g.median_score, g.median_position_error, g.median_yaw_error, g.failures);
    os << line;
    for (size_t e = 0; e < g.scores.size(); ++e) {
      std::snprintf(line, sizeof line, "      episode %zu seed %llu score %.4f\n", e,
                    static_cast<unsigned long long>(g.seeds[e]), g.scores[e]);
      os << line;
    }
  }
}

/// 0 when every episode finished, 1 when any failed.
inline int exit_status(const BatchResult& r) { return r.any_failed() ? 1 : 0; }

}  // namespace dexprim
