#include "dgnlab/envs.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dgnlab;

namespace {

const EnvName kAll[] = {EnvName::point_maze, EnvName::reacher_sparse, EnvName::pusher_toy};

EpisodeResult run_expert(const EnvSpec& spec, std::uint64_t seed, ExpertMode mode) {
  auto [state, obs] = reset(spec, seed);
  EpisodeResult r;
  while (!state.done) {
    StepResult s = step(spec, state, expert_action(spec, state, mode));
    r.undiscounted_return += s.transition.reward;
    r.success = r.success || s.transition.success;
    ++r.length;
    state = std::move(s.state);
  }
  return r;
}

}  // namespace

TEST_CASE("reset: deterministic per seed and step index zero") {
  for (EnvName name : kAll) {
    const EnvSpec spec = make_env_spec(name);
    const ResetResult a = reset(spec, 11), b = reset(spec, 11);
    CHECK(a.obs == b.obs);
    CHECK(a.obs.size() == spec.obs_dim);
    CHECK(a.state.step_index == 0);
    CHECK_FALSE(a.state.done);
  }
}

TEST_CASE("point_maze reset observation") {
  const ResetResult r = reset(make_env_spec(EnvName::point_maze), 3);
  CHECK(r.obs(0) == doctest::Approx(0.1));
  CHECK(r.obs(1) == doctest::Approx(0.1));
  CHECK(r.obs(2) == doctest::Approx(0.9));
  CHECK(r.obs(3) == doctest::Approx(0.9));
}

TEST_CASE("zero action leaves the agent in place") {
  for (EnvName name : kAll) {
    const EnvSpec spec = make_env_spec(name);
    const ResetResult r = reset(spec, 2);
    const StepResult s = step(spec, r.state, Vec::Zero(spec.act_dim));
    CHECK(s.transition.next_obs == r.obs);
    CHECK(s.transition.reward == 0.0);
    CHECK(s.state.step_index == 1);
  }
}

TEST_CASE("point_maze one-step success next to the goal") {
  const EnvSpec spec = make_env_spec(EnvName::point_maze);
  EnvState st = reset(spec, 0).state;
  st.x(0) = 0.85;
  st.x(1) = 0.9;
  const StepResult s = step(spec, st, Vec::Unit(2, 0));
  CHECK(s.state.x(0) == doctest::Approx(0.9));
  CHECK(s.transition.success);
  CHECK(s.transition.reward == 1.0);
  CHECK(s.transition.done);
  CHECK_THROWS_AS(step(spec, s.state, Vec::Zero(2)), ContractError);
}

TEST_CASE("actions are clipped to the box") {
  for (EnvName name : kAll) {
    const EnvSpec spec = make_env_spec(name);
    const EnvState st = reset(spec, 4).state;
    Vec big = Vec::Zero(spec.act_dim), unit = Vec::Zero(spec.act_dim);
    big(0) = 10.0;
    unit(0) = 1.0;
    const StepResult a = step(spec, st, big), b = step(spec, st, unit);
    CHECK(a.state.x == b.state.x);
    CHECK(a.transition.action == unit);
  }
}

TEST_CASE("point_maze walls block crossing") {
  const EnvSpec spec = make_env_spec(EnvName::point_maze);
  EnvState st = reset(spec, 0).state;
  st.x(0) = 0.49;
  st.x(1) = 0.49;
  const StepResult s = step(spec, st, Vec::Constant(2, 1.0));
  CHECK(s.state.x(0) + s.state.x(1) < 1.0);
}

TEST_CASE("positions stay in bounds under random actions") {
  for (EnvName name : kAll) {
    const EnvSpec spec = make_env_spec(name);
    SeededRng rng(9);
    for (int ep = 0; ep < 20; ++ep) {
      EnvState st = reset(spec, static_cast<std::uint64_t>(ep)).state;
      double ret = 0.0;
      while (!st.done) {
        Vec a(spec.act_dim);
        for (Index i = 0; i < a.size(); ++i) a(i) = rng.uniform(-1.5, 1.5);
        StepResult s = step(spec, st, a);
        CHECK(s.transition.reward == (s.transition.success ? 1.0 : 0.0));
        CHECK(s.transition.done == (s.transition.success || s.state.step_index == spec.horizon));
        ret += s.transition.reward;
        st = std::move(s.state);
        if (name != EnvName::reacher_sparse) {
          CHECK(st.x.head(2).minCoeff() >= 0.0);
          CHECK(st.x.head(2).maxCoeff() <= 1.0);
        } else {
          CHECK(std::abs(st.x(0)) <= std::numbers::pi + 1e-12);
          CHECK(std::abs(st.x(1)) <= std::numbers::pi + 1e-12);
        }
      }
      CHECK(st.step_index <= spec.horizon);
      CHECK((ret == 0.0 || ret == 1.0));
    }
  }
}

TEST_CASE("expert: fixed point at the goal") {
  const EnvSpec spec = make_env_spec(EnvName::point_maze);
  EnvState st = reset(spec, 0).state;
  st.x(0) = st.x(2);
  st.x(1) = st.x(3);
  CHECK(expert_action(spec, st, ExpertMode::A).isZero());
  CHECK(expert_action(spec, st, ExpertMode::B).isZero());
}

TEST_CASE("expert: maze modes split at the start") {
  const EnvSpec spec = make_env_spec(EnvName::point_maze);
  const EnvState st = reset(spec, 0).state;
  const Vec a = expert_action(spec, st, ExpertMode::A), b = expert_action(spec, st, ExpertMode::B);
  // The gaps sit on either side of the diagonal, so the x - y component flips sign.
  CHECK((a(0) - a(1)) * (b(0) - b(1)) < 0.0);
}

TEST_CASE("expert solves every environment from reset") {
  for (EnvName name : kAll) {
    const EnvSpec spec = make_env_spec(name);
    for (ExpertMode mode : {ExpertMode::A, ExpertMode::B}) {
      int wins = 0;
      for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const EpisodeResult r = run_expert(spec, seed, mode);
        wins += r.success ? 1 : 0;
        CHECK(r.length <= spec.horizon);
      }
      CAPTURE(to_string(name));
      CHECK(wins >= 99);
    }
  }
}

TEST_CASE("expert action components stay within [-1, 1]") {
  for (EnvName name : kAll) {
    const EnvSpec spec = make_env_spec(name);
    SeededRng rng(5);
    for (int i = 0; i < 200; ++i) {
      EnvState st = reset(spec, static_cast<std::uint64_t>(i)).state;
      for (Index k = 0; k < 2; ++k) st.x(k) = name == EnvName::reacher_sparse ? rng.uniform(-3.0, 3.0) : rng.uniform(0.0, 1.0);
      CHECK(expert_action(spec, st, ExpertMode::A).cwiseAbs().maxCoeff() <= 1.0);
    }
  }
}

TEST_CASE("unknown env tag is a config error") {
  CHECK_THROWS_AS(make_env_spec("cartpole"), ConfigError);
  CHECK(parse_env_name("pusher_toy") == EnvName::pusher_toy);
}
