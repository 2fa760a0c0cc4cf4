#pragma once

#include "dgnlab/core.hpp"
#include "dgnlab/rng.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dgnlab {

enum class EnvName { point_maze, reacher_sparse, pusher_toy };

std::string to_string(EnvName name);
/// Throws ConfigError for unknown tags.
EnvName parse_env_name(std::string_view tag);

struct EnvSpec {
  EnvName name;
  Index obs_dim;
  Index act_dim;
  int horizon;
  Vec action_low;
  Vec action_high;
  double goal_radius;
};

EnvSpec make_env_spec(EnvName name);
EnvSpec make_env_spec(std::string_view tag);

/// Full simulator state. Layout of `x` per environment:
///   point_maze      (x, y, goal_x, goal_y)
///   reacher_sparse  (theta1, theta2, goal_x, goal_y)
///   pusher_toy      (agent_x, agent_y, block_x, block_y, goal_x, goal_y)
struct EnvState {
  EnvName name;
  Vec x;
  int step_index = 0;
  bool done = false;
  SeededRng rng;
};

struct Transition {
  Vec obs;
  Vec action;
  double reward = 0.0;
  Vec next_obs;
  bool done = false;
  bool success = false;

  friend bool operator==(const Transition& a, const Transition& b) {
    return a.obs == b.obs && a.action == b.action && a.reward == b.reward &&
           a.next_obs == b.next_obs && a.done == b.done && a.success == b.success;
  }
};

struct EpisodeResult {
  bool success = false;
  double undiscounted_return = 0.0;
  int length = 0;
};

struct ResetResult {
  EnvState state;
  Vec obs;
};

struct StepResult {
  EnvState state;
  Transition transition;
};

ResetResult reset(const EnvSpec& spec, std::uint64_t seed);
/// Throws ContractError when the episode is already done.
StepResult step(const EnvSpec& spec, const EnvState& state, const Vec& action);
Vec observe(const EnvSpec& spec, const EnvState& state);
Vec clip_action(const EnvSpec& spec, const Vec& action);

/// Expert routes. point_maze uses A (upper-left gap) and B (lower-right gap);
/// the other environments have a single route and ignore the mode.
enum class ExpertMode { A, B };
std::string to_string(ExpertMode mode);
ExpertMode parse_expert_mode(std::string_view tag);

/// Scripted controller; every component lies in [-1, 1] before any clipping.
Vec expert_action(const EnvSpec& spec, const EnvState& state, ExpertMode mode);

/// Distance the success test compares against goal_radius.
double task_distance(const EnvSpec& spec, const EnvState& state);

namespace maze {
inline constexpr double step_size = 0.05;
inline constexpr double start_x = 0.1, start_y = 0.1;
inline constexpr double goal_x = 0.9, goal_y = 0.9;
/// Wall along x + y = 1 with openings for x in (0.15, 0.35) and (0.65, 0.85).
struct Segment {
  double ax, ay, bx, by;
};
const std::vector<Segment>& walls();
inline constexpr double gap_a_x = 0.25, gap_a_y = 0.75;
inline constexpr double gap_b_x = 0.75, gap_b_y = 0.25;
}  // namespace maze

namespace reacher {
inline constexpr double link1 = 0.5, link2 = 0.5;
inline constexpr double step_size = 0.1;
inline constexpr double start_theta1 = 0.0, start_theta2 = 1.5707963267948966;
inline constexpr double goal_r_min = 0.3, goal_r_max = 0.9;
Eigen::Vector2d end_effector(double theta1, double theta2);
}  // namespace reacher

namespace pusher {
inline constexpr double step_size = 0.05;
inline constexpr double agent_radius = 0.05, block_radius = 0.07;
inline constexpr double start_x = 0.5, start_y = 0.1;
inline constexpr double block_x_lo = 0.35, block_x_hi = 0.45, block_y_lo = 0.45, block_y_hi = 0.55;
inline constexpr double goal_x_lo = 0.70, goal_x_hi = 0.80, goal_y_lo = 0.60, goal_y_hi = 0.80;
}  // namespace pusher

}  // namespace dgnlab
