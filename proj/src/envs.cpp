#include "dgnlab/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dgnlab {

namespace {

constexpr std::uint64_t kResetStream = 0x5EED'0001;
/// Experts never command more than this fraction of full speed, so demo
/// actions mostly stay inside the action box after noise is added.
constexpr double kExpertSpeed = 0.8;

Vec limit_inf_norm(Vec a, double cap) {
  const double m = a.cwiseAbs().maxCoeff();
  if (m > cap) a *= cap / m;
  return a;
}

double cross(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

/// Closed-segment intersection test, touching counts.
bool segments_intersect(double p1x, double p1y, double p2x, double p2y, const maze::Segment& s) {
  auto orient = [](double ax, double ay, double bx, double by, double cx, double cy) {
    const double v = cross(bx - ax, by - ay, cx - ax, cy - ay);
    return (v > 0) - (v < 0);
  };
  auto on_segment = [](double ax, double ay, double bx, double by, double cx, double cy) {
    return std::min(ax, bx) <= cx && cx <= std::max(ax, bx) && std::min(ay, by) <= cy &&
           cy <= std::max(ay, by);
  };
  const int o1 = orient(p1x, p1y, p2x, p2y, s.ax, s.ay);
  const int o2 = orient(p1x, p1y, p2x, p2y, s.bx, s.by);
  const int o3 = orient(s.ax, s.ay, s.bx, s.by, p1x, p1y);
  const int o4 = orient(s.ax, s.ay, s.bx, s.by, p2x, p2y);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1x, p1y, p2x, p2y, s.ax, s.ay)) return true;
  if (o2 == 0 && on_segment(p1x, p1y, p2x, p2y, s.bx, s.by)) return true;
  if (o3 == 0 && on_segment(s.ax, s.ay, s.bx, s.by, p1x, p1y)) return true;
  if (o4 == 0 && on_segment(s.ax, s.ay, s.bx, s.by, p2x, p2y)) return true;
  return false;
}

bool blocked(double x0, double y0, double x1, double y1) {
  return std::ranges::any_of(maze::walls(),
                             [&](const maze::Segment& s) { return segments_intersect(x0, y0, x1, y1, s); });
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0) a += two_pi;
  return a - std::numbers::pi;
}

Vec maze_expert(const EnvState& s, ExpertMode mode) {
  const Eigen::Vector2d pos(s.x[0], s.x[1]);
  const Eigen::Vector2d goal(s.x[2], s.x[3]);
  Eigen::Vector2d target;
  if (pos.sum() >= 1.0) {
    target = goal;
  } else {
    const Eigen::Vector2d gap = mode == ExpertMode::A ? Eigen::Vector2d(maze::gap_a_x, maze::gap_a_y)
                                                      : Eigen::Vector2d(maze::gap_b_x, maze::gap_b_y);
    const Eigen::Vector2d pre_gap = gap - Eigen::Vector2d(0.1, 0.1);
    const double corridor_offset = (pos.x() - pos.y()) - (gap.x() - gap.y());
    const bool in_corridor = std::abs(corridor_offset) <= 0.1 && pos.sum() >= 0.78;
    target = in_corridor ? Eigen::Vector2d(gap + Eigen::Vector2d(0.05, 0.05)) : pre_gap;
  }
  return limit_inf_norm(Vec((target - pos) / maze::step_size), kExpertSpeed);
}

Vec reacher_expert(const EnvState& s) {
  const double gx = s.x[2], gy = s.x[3];
  const double r2 = gx * gx + gy * gy;
  const double l1 = reacher::link1, l2 = reacher::link2;
  double c = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  c = std::clamp(c, -1.0, 1.0);
  const double elbow = s.x[1] >= 0.0 ? 1.0 : -1.0;
  const double t2 = elbow * std::acos(c);
  const double t1 = wrap_angle(std::atan2(gy, gx) - std::atan2(l2 * std::sin(t2), l1 + l2 * std::cos(t2)));
  Vec err(2);
  err << t1 - s.x[0], t2 - s.x[1];
  return limit_inf_norm(Vec(err / reacher::step_size), kExpertSpeed);
}

Vec pusher_expert(const EnvState& s) {
  const Eigen::Vector2d agent(s.x[0], s.x[1]);
  const Eigen::Vector2d block(s.x[2], s.x[3]);
  const Eigen::Vector2d goal(s.x[4], s.x[5]);
  const double remaining = (goal - block).norm();
  if (remaining < 1e-12) return Vec::Zero(2);
  const Eigen::Vector2d dir = (goal - block) / remaining;
  const Eigen::Vector2d perp(-dir.y(), dir.x());
  const Eigen::Vector2d rel = agent - block;
  const double along = rel.dot(dir);
  const double lateral = rel.dot(perp);
  const double side = lateral >= 0.0 ? 1.0 : -1.0;
  constexpr double contact = pusher::agent_radius + pusher::block_radius;

  // Local-frame waypoint (along, lateral) relative to the block.
  double ta = 0.0, tl = 0.0;
  if (along <= -0.11 && std::abs(lateral) <= 0.04) {
    // Push: place the agent so the block ends up at most one step closer.
    ta = -contact + std::min(pusher::step_size, remaining);
    tl = 0.0;
  } else if (along <= -0.13) {
    ta = -0.15;
    tl = 0.0;
  } else if (std::abs(lateral) < 0.2) {
    ta = along;
    tl = side * 0.21;
  } else {
    ta = -0.15;
    tl = side * 0.21;
  }
  const Eigen::Vector2d target = block + ta * dir + tl * perp;
  return limit_inf_norm(Vec((target - agent) / pusher::step_size), kExpertSpeed);
}

}  // namespace

std::string to_string(EnvName name) {
  switch (name) {
    case EnvName::point_maze: return "point_maze";
    case EnvName::reacher_sparse: return "reacher_sparse";
    case EnvName::pusher_toy: return "pusher_toy";
  }
  return "unknown";
}

EnvName parse_env_name(std::string_view tag) {
  if (tag == "point_maze") return EnvName::point_maze;
  if (tag == "reacher_sparse") return EnvName::reacher_sparse;
  if (tag == "pusher_toy") return EnvName::pusher_toy;
  throw ConfigError("unknown environment '" + std::string(tag) + "'");
}

std::string to_string(ExpertMode mode) { return mode == ExpertMode::A ? "A" : "B"; }

ExpertMode parse_expert_mode(std::string_view tag) {
  if (tag == "A") return ExpertMode::A;
  if (tag == "B") return ExpertMode::B;
  throw ConfigError("unknown expert mode '" + std::string(tag) + "'");
}

EnvSpec make_env_spec(EnvName name) {
  switch (name) {
    case EnvName::point_maze:
      return {name, 4, 2, 100, Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), 0.05};
    case EnvName::reacher_sparse:
      return {name, 6, 2, 100, Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), 0.05};
    case EnvName::pusher_toy:
      return {name, 6, 2, 200, Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), 0.05};
  }
  throw ConfigError("unknown environment");
}

EnvSpec make_env_spec(std::string_view tag) { return make_env_spec(parse_env_name(tag)); }

const std::vector<maze::Segment>& maze::walls() {
  static const std::vector<Segment> w = {
      {0.0, 1.0, 0.15, 0.85},
      {0.35, 0.65, 0.65, 0.35},
      {0.85, 0.15, 1.0, 0.0},
  };
  return w;
}

Eigen::Vector2d reacher::end_effector(double theta1, double theta2) {
  return {link1 * std::cos(theta1) + link2 * std::cos(theta1 + theta2),
          link1 * std::sin(theta1) + link2 * std::sin(theta1 + theta2)};
}

Vec observe(const EnvSpec& spec, const EnvState& s) {
  if (spec.name == EnvName::reacher_sparse) {
    const Eigen::Vector2d ee = reacher::end_effector(s.x[0], s.x[1]);
    Vec obs(6);
    obs << s.x[0] / std::numbers::pi, s.x[1] / std::numbers::pi, ee.x(), ee.y(), s.x[2], s.x[3];
    return obs;
  }
  return s.x;
}

double task_distance(const EnvSpec& spec, const EnvState& s) {
  switch (spec.name) {
    case EnvName::point_maze: return std::hypot(s.x[0] - s.x[2], s.x[1] - s.x[3]);
    case EnvName::reacher_sparse: {
      const Eigen::Vector2d ee = reacher::end_effector(s.x[0], s.x[1]);
      return std::hypot(ee.x() - s.x[2], ee.y() - s.x[3]);
    }
    case EnvName::pusher_toy: return std::hypot(s.x[2] - s.x[4], s.x[3] - s.x[5]);
  }
  return 0.0;
}

ResetResult reset(const EnvSpec& spec, std::uint64_t seed) {
  EnvState s{spec.name, Vec(), 0, false, SeededRng(derive_seed(seed, kResetStream))};
  switch (spec.name) {
    case EnvName::point_maze:
      s.x = Vec(4);
      s.x << maze::start_x, maze::start_y, maze::goal_x, maze::goal_y;
      break;
    case EnvName::reacher_sparse: {
      const double r = std::sqrt(s.rng.uniform(reacher::goal_r_min * reacher::goal_r_min,
                                               reacher::goal_r_max * reacher::goal_r_max));
      const double phi = s.rng.uniform(-std::numbers::pi, std::numbers::pi);
      s.x = Vec(4);
      s.x << reacher::start_theta1, reacher::start_theta2, r * std::cos(phi), r * std::sin(phi);
      break;
    }
    case EnvName::pusher_toy: {
      s.x = Vec(6);
      s.x[0] = pusher::start_x;
      s.x[1] = pusher::start_y;
      s.x[2] = s.rng.uniform(pusher::block_x_lo, pusher::block_x_hi);
      s.x[3] = s.rng.uniform(pusher::block_y_lo, pusher::block_y_hi);
      s.x[4] = s.rng.uniform(pusher::goal_x_lo, pusher::goal_x_hi);
      s.x[5] = s.rng.uniform(pusher::goal_y_lo, pusher::goal_y_hi);
      break;
    }
  }
  Vec obs = observe(spec, s);
  return {std::move(s), std::move(obs)};
}

Vec clip_action(const EnvSpec& spec, const Vec& action) {
  return action.cwiseMax(spec.action_low).cwiseMin(spec.action_high);
}

StepResult step(const EnvSpec& spec, const EnvState& state, const Vec& action) {
  if (state.done) throw ContractError("step: episode is already done");
  require_shape(action.size() == spec.act_dim, "step: action has wrong dimension");
  if (action.hasNaN()) throw NumericError("step: NaN action");
  const Vec a = clip_action(spec, action);
  EnvState next = state;
  Vec& x = next.x;
  switch (spec.name) {
    case EnvName::point_maze: {
      const double nx = std::clamp(x[0] + maze::step_size * a[0], 0.0, 1.0);
      if (!blocked(x[0], x[1], nx, x[1])) x[0] = nx;
      const double ny = std::clamp(x[1] + maze::step_size * a[1], 0.0, 1.0);
      if (!blocked(x[0], x[1], x[0], ny)) x[1] = ny;
      break;
    }
    case EnvName::reacher_sparse:
      x[0] = std::clamp(x[0] + reacher::step_size * a[0], -std::numbers::pi, std::numbers::pi);
      x[1] = std::clamp(x[1] + reacher::step_size * a[1], -std::numbers::pi, std::numbers::pi);
      break;
    case EnvName::pusher_toy: {
      constexpr double ra = pusher::agent_radius, rb = pusher::block_radius, contact = ra + rb;
      Eigen::Vector2d agent(x[0], x[1]), block(x[2], x[3]);
      agent = (agent + pusher::step_size * Eigen::Vector2d(a[0], a[1])).cwiseMax(ra).cwiseMin(1.0 - ra);
      Eigen::Vector2d gap = block - agent;
      if (gap.norm() < contact) {
        const Eigen::Vector2d n =
            gap.norm() > 1e-12 ? Eigen::Vector2d(gap.normalized()) : Eigen::Vector2d(a[0], a[1]).normalized();
        block = (agent + contact * n).cwiseMax(rb).cwiseMin(1.0 - rb);
        gap = block - agent;
        if (gap.norm() < contact && gap.norm() > 1e-12)
          agent = (block - contact * gap.normalized()).cwiseMax(ra).cwiseMin(1.0 - ra);
      }
      x[0] = agent.x();
      x[1] = agent.y();
      x[2] = block.x();
      x[3] = block.y();
      break;
    }
  }
  ++next.step_index;
  const bool success = task_distance(spec, next) < spec.goal_radius;
  next.done = success || next.step_index >= spec.horizon;
  Transition t{observe(spec, state), a, success ? 1.0 : 0.0, observe(spec, next), next.done, success};
  return {std::move(next), std::move(t)};
}

Vec expert_action(const EnvSpec& spec, const EnvState& state, ExpertMode mode) {
  switch (spec.name) {
    case EnvName::point_maze: return maze_expert(state, mode);
    case EnvName::reacher_sparse: return reacher_expert(state);
    case EnvName::pusher_toy: return pusher_expert(state);
  }
  return Vec::Zero(spec.act_dim);
}

}  // namespace dgnlab
