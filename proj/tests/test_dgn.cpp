#include "dgnlab/dgn.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dgnlab;

namespace {

const double kLn2 = std::log(2.0);

DgnConfig small_dgn(DgnVariant v = DgnVariant::zero_mean) {
  DgnConfig c;
  c.variant = v;
  c.hidden = {8, 8};
  c.dropout_rate = 0.0;
  return c;
}

/// Policy whose covariance head outputs `raw` for every state.
SamplingPolicy constant_raw(Index act_dim, const Vec& raw) {
  SeededRng rng(0);
  SamplingPolicy p = make_sampling_policy(2, act_dim, small_dgn(), rng);
  for (auto& w : p.covariance.net.weights) w.setZero();
  for (auto& b : p.covariance.net.biases) b.setZero();
  p.covariance.net.biases.back() = raw;
  return p;
}

Net zero_actor(Index obs_dim, Index act_dim) {
  SeededRng rng(0);
  Net n = mlp_init<Scalar>({obs_dim, 4, act_dim}, 0.0, rng);
  for (auto& w : n.weights) w.setZero();
  for (auto& b : n.biases) b.setZero();
  return n;
}

double inv_softplus(double y) { return std::log(std::expm1(y)); }

}  // namespace

TEST_CASE("chol_from_raw: analytic assemblies") {
  const Mat a1 = chol_from_raw(Vec::Zero(1), 1, 1e-3);
  CHECK(a1(0, 0) == doctest::Approx(kLn2).epsilon(1e-15));

  const Mat a2 = chol_from_raw(Vec::Zero(3), 2, 1e-3);
  CHECK(a2(0, 0) == doctest::Approx(kLn2));
  CHECK(a2(1, 1) == doctest::Approx(kLn2));
  CHECK(a2(1, 0) == 0.0);
  CHECK(a2(0, 1) == 0.0);
  const Mat s = a2 * a2.transpose();
  CHECK((s - kLn2 * kLn2 * Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);

  const Mat low = chol_from_raw(Vec::Constant(3, -200.0), 2, 1e-3);
  CHECK(low(0, 0) == 1e-3);
  CHECK(low(1, 1) == 1e-3);
  CHECK(low(1, 0) == -200.0);
}

TEST_CASE("covariance eigenvalues stay above the floor on random states") {
  for (EnvName env : {EnvName::point_maze, EnvName::reacher_sparse, EnvName::pusher_toy}) {
    const EnvSpec spec = make_env_spec(env);
    SeededRng rng(static_cast<std::uint64_t>(env) + 1);
    DgnConfig c;
    c.sigma_min = 1e-3;
    SamplingPolicy p = make_sampling_policy(spec.obs_dim, spec.act_dim, c, rng);
    const DemoDataset d = generate_demos(spec, 5, 0.1, {{ExpertMode::A, 1.0}}, 2);
    const Net actor = mlp_init<Scalar>({spec.obs_dim, 16, spec.act_dim}, 0.0, rng);
    for (int round = 0; round < 2; ++round) {
      for (int i = 0; i < 1000; ++i) {
        const Vec obs = gaussian_draw(rng, spec.obs_dim);
        const Mat a = chol_factor(p, obs);
        CHECK(a.isLowerTriangular());
        CHECK(a.diagonal().minCoeff() >= c.sigma_min);
        const Eigen::SelfAdjointEigenSolver<Mat> es(covariance(p, obs));
        CHECK(es.eigenvalues().minCoeff() >= c.sigma_min * c.sigma_min - 1e-9);
      }
      fit(p, actor, DemoStore(d), rng);
    }
  }
}

TEST_CASE("covariance is positive definite with determinant above the floor for any head output") {
  // Large off-diagonal entries can push the smallest eigenvalue below the
  // diagonal floor; det(Sigma) = prod diag(A)^2 is the bound that always holds.
  SeededRng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Vec raw = 3.0 * gaussian_draw(rng, 6);
    const Mat a = chol_from_raw(raw, 3, 1e-3);
    const Mat s = a * a.transpose();
    CHECK(a.diagonal().minCoeff() >= 1e-3);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(Eigen::LLT<Mat>(s).info() == Eigen::Success);
    CHECK(a.diagonal().array().log().sum() >= 3.0 * std::log(1e-3) - 1e-12);
  }
}

TEST_CASE("nll: closed-form cases") {
  const double one = inv_softplus(1.0);
  const Vec o = Vec::Zero(2);
  SeededRng rng(0);
  {
    const SamplingPolicy p = constant_raw(1, Vec::Constant(1, one));
    const Net actor = zero_actor(2, 1);
    CHECK(nll(p, actor, o, Vec::Zero(1), Mode::eval, rng).loss == doctest::Approx(0.91893853320467).epsilon(1e-12));
    CHECK(nll(p, actor, o, Vec::Constant(1, 2.0), Mode::eval, rng).loss ==
          doctest::Approx(2.91893853320467).epsilon(1e-12));
  }
  {
    const SamplingPolicy p = constant_raw(2, (Vec(3) << one, 0.0, one).finished());
    const Net actor = zero_actor(2, 2);
    CHECK(nll(p, actor, o, Vec::Zero(2), Mode::eval, rng).loss == doctest::Approx(1.83787706640935).epsilon(1e-12));
  }
}

TEST_CASE("nll gradients match finite differences for every variant") {
  for (DgnVariant v : {DgnVariant::zero_mean, DgnVariant::residual, DgnVariant::global_ablation}) {
    SeededRng rng(4);
    SamplingPolicy p = make_sampling_policy(3, 2, small_dgn(v), rng);
    Mat& w = p.covariance.net.weights.back();
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = 0.5 * rng.normal();
    const Net actor = mlp_init<Scalar>({3, 8, 2}, 0.0, rng);
    const Mat obs = Mat::NullaryExpr(3, 9, [&] { return rng.normal(); });
    const Mat act = Mat::NullaryExpr(2, 9, [&] { return 0.5 * rng.normal(); });
    const NllResult r = nll(p, actor, obs, act, Mode::eval, rng);
    const auto fd_cov = finite_diff_grad(
        [&](const Net& n) {
          SamplingPolicy q = p;
          q.covariance.net = n;
          return mean_nll(q, actor, obs, act);
        },
        p.covariance.net, 1e-5);
    CHECK(max_relative_error(r.cov_grad, fd_cov) < 1e-4);
    CHECK(r.residual_grad.has_value() == (v == DgnVariant::residual));
    if (p.residual) {
      const auto fd_res = finite_diff_grad(
          [&](const Net& n) {
            SamplingPolicy q = p;
            q.residual->net = n;
            return mean_nll(q, actor, obs, act);
          },
          p.residual->net, 1e-5);
      CHECK(max_relative_error(*r.residual_grad, fd_res) < 1e-4);
    }
  }
}

TEST_CASE("fit: zero epochs is a no-op and held-out NLL falls over the first fits") {
  SeededRng rng(11);
  DgnConfig c = small_dgn();
  c.learning_rate = 1e-3;
  c.epochs_per_update = 2;
  SamplingPolicy p = make_sampling_policy(2, 2, c, rng);
  const Net actor = zero_actor(2, 2);
  const Mat l = (Mat(2, 2) << 0.3, 0.0, 0.15, 0.2).finished();
  auto draw = [&](Index n, Mat& obs, Mat& act) {
    obs = Mat::NullaryExpr(2, n, [&] { return rng.uniform(-1.0, 1.0); });
    act = l * Mat::NullaryExpr(2, n, [&] { return rng.normal(); });
  };
  Mat obs, act, hold_obs, hold_act;
  draw(2000, obs, act);
  draw(500, hold_obs, hold_act);

  SamplingPolicy frozen = p;
  frozen.epochs_per_update = 0;
  const FitReport none = fit_pairs(frozen, actor, obs, act, rng);
  CHECK(none.optimizer_steps == 0);
  CHECK(flatten(frozen.covariance.net) == flatten(p.covariance.net));

  double last = mean_nll(p, actor, hold_obs, hold_act);
  for (int call = 0; call < 3; ++call) {
    fit_pairs(p, actor, obs, act, rng);
    const double now = mean_nll(p, actor, hold_obs, hold_act);
    CHECK(now < last);
    last = now;
  }
}

TEST_CASE("fit leaves the actor untouched and counts calls") {
  SeededRng rng(12);
  const EnvSpec spec = make_env_spec(EnvName::point_maze);
  const DemoDataset d = generate_demos(spec, 3, 0.1, {{ExpertMode::A, 1.0}}, 1);
  const DemoStore store(d);
  SamplingPolicy p = make_sampling_policy(4, 2, small_dgn(), rng);
  const Net actor = mlp_init<Scalar>({4, 8, 2}, 0.0, rng);
  const auto before = param_hash(actor);
  const FitReport r = fit(p, actor, store, rng);
  CHECK(param_hash(actor) == before);
  CHECK(p.fit_calls == 1);
  CHECK(r.epochs == 2);
  CHECK(r.optimizer_steps == 2 * static_cast<long>((store.size() + 127) / 128));
}

TEST_CASE("noise_scale: anneal and shutoff") {
  const AnnealSchedule on{true, 30000.0};
  const ShutoffMonitor idle;
  CHECK(noise_scale(on, idle, 0) == 1.0);
  CHECK(std::abs(noise_scale(on, idle, 30000) - std::exp(-1.0)) < 1e-12);
  CHECK(noise_scale(AnnealSchedule{}, idle, 123456) == 1.0);

  ShutoffMonitor m(true, 10, 0.5);
  for (int i = 0; i < 10; ++i) m.record(true);
  REQUIRE(m.tripped());
  CHECK(noise_scale(on, m, 0) == 0.0);
  CHECK(noise_scale(on, m, 99999) == 0.0);
  CHECK_THROWS_AS(noise_scale(on, idle, -1), ContractError);
}

TEST_CASE("shutoff: trip point, short window, latching") {
  ShutoffMonitor m(true, 10, 0.5);
  for (int i = 0; i < 5; ++i) m.record(true);
  for (int i = 0; i < 4; ++i) m.record(false);
  CHECK_FALSE(m.tripped());  // only nine episodes so far
  m.record(false);
  CHECK(m.tripped());
  for (int i = 0; i < 10; ++i) m.record(false);
  CHECK(m.tripped());

  ShutoffMonitor off(false, 10, 0.5);
  for (int i = 0; i < 30; ++i) off.record(true);
  CHECK_FALSE(off.tripped());
}

TEST_CASE("sample: zero scale returns the actor mean") {
  SeededRng rng(13);
  DgnConfig c = small_dgn();
  c.schedule = NoiseSchedule::shutoff;
  SamplingPolicy p = make_sampling_policy(4, 2, c, rng);
  for (int i = 0; i < 10; ++i) record_episode(p, true);
  const Net actor = mlp_init<Scalar>({4, 8, 2}, 0.0, rng);
  const Vec obs = Vec::Constant(4, 0.3);
  const SeededRng before = rng;
  CHECK(sample(p, actor, obs, 5, rng) == actor_mean(actor, obs));
  CHECK(rng == before);
}

TEST_CASE("sample: residual variant is centred on actor plus offset") {
  SeededRng rng(14);
  SamplingPolicy p = make_sampling_policy(3, 2, small_dgn(DgnVariant::residual), rng);
  Net& res = p.residual->net;
  res.biases.back() = (Vec(2) << 0.2, -0.1).finished();
  const Net actor = mlp_init<Scalar>({3, 8, 2}, 0.0, rng);
  const Vec obs = (Vec(3) << 0.1, -0.4, 0.7).finished();
  const Vec target = actor_mean(actor, obs) + mlp_eval(res, obs);
  const Mat sigma = covariance(p, obs);
  constexpr int kDraws = 100000;
  Vec sum = Vec::Zero(2);
  for (int i = 0; i < kDraws; ++i) sum += actor_mean(actor, obs) + sample_noise(p, obs, rng);
  const Vec mean = sum / kDraws;
  for (Index k = 0; k < 2; ++k) CHECK(std::abs(mean(k) - target(k)) < 3.0 * std::sqrt(sigma(k, k) / kDraws));
}

TEST_CASE("global ablation ignores the state") {
  SeededRng rng(15);
  SamplingPolicy p = make_sampling_policy(3, 2, small_dgn(DgnVariant::global_ablation), rng);
  CHECK_FALSE(p.covariance.state_conditioned);
  p.covariance.net.biases.back() = (Vec(3) << 0.4, -0.3, 0.9).finished();
  CHECK(chol_factor(p, Vec::Zero(3)) == chol_factor(p, Vec::Constant(3, 5.0)));
}

TEST_CASE("variants carry a residual head only when asked") {
  SeededRng rng(16);
  CHECK_FALSE(make_sampling_policy(3, 2, small_dgn(DgnVariant::zero_mean), rng).residual.has_value());
  CHECK(make_sampling_policy(3, 2, small_dgn(DgnVariant::residual), rng).residual.has_value());
  CHECK(parse_dgn_variant("residual") == DgnVariant::residual);
  CHECK_THROWS_AS(parse_noise_schedule("cosine"), ConfigError);
  DgnConfig bad;
  bad.anneal_tau = 0.0;
  bad.schedule = NoiseSchedule::anneal;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
