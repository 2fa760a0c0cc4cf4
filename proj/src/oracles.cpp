#include "dgnlab/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include <unistd.h>

namespace dgnlab {

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

Mat normal_matrix(Index rows, Index cols, SeededRng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  return m;
}

Mat uniform_matrix(Index rows, Index cols, SeededRng& rng, double lo, double hi) {
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(lo, hi);
  return m;
}

void randomize_output_layer(Net& net, SeededRng& rng, double scale) {
  net.weights.back() = normal_matrix(net.weights.back().rows(), net.weights.back().cols(), rng, scale);
  net.biases.back() = normal_matrix(net.biases.back().size(), 1, rng, scale);
}

constexpr double kFdStep = 1e-6;

double half_logdet_2pie(const Mat& sigma) {
  const Eigen::LLT<Mat> llt(sigma);
  const double logdet = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
  return 0.5 * (static_cast<double>(sigma.rows()) * std::log(2.0 * std::numbers::pi * std::numbers::e) + logdet);
}

}  // namespace

double GradientErrors::worst() const {
  return std::max({actor, critic, covnet, global_cov, residual, bc_mean, bc_std});
}

GradientErrors gradient_errors(std::uint64_t seed) {
  SeededRng rng(seed);
  const Index obs_dim = 3, act_dim = 2, n = 6;
  GradientErrors out;

  AgentConfig acfg;
  acfg.ensemble_size = 2;
  acfg.actor_hidden = {8, 8};
  acfg.critic_hidden = {8, 8};
  const AgentState agent = make_agent(obs_dim, act_dim, acfg, rng);
  const Mat obs = normal_matrix(obs_dim, n, rng);
  const Mat act = uniform_matrix(act_dim, n, rng, -0.9, 0.9);
  SeededRng unused(0);

  {
    const NetGrad analytic = actor_ascent_grad(
        agent.actor, obs, [&](const Mat& o, const Mat& a) { return ensemble_action_grad(agent, o, a); }, Mode::eval,
        unused);
    const NetGrad fd = finite_diff_grad(
        [&](const Net& a) { return -ensemble_q(agent, obs, actor_mean(a, obs)).mean(); }, agent.actor, kFdStep);
    out.actor = max_relative_error(analytic, fd);
  }
  {
    const Mat sa = critic_input(obs, act);
    const Vec y = normal_matrix(n, 1, rng);
    const Net& critic = agent.critics[0];
    const NetGrad analytic = critic_regression(critic, sa, y, Mode::eval, unused).grad;
    const NetGrad fd = finite_diff_grad(
        [&](const Net& c) { return critic_regression(c, sa, y, Mode::eval, unused).loss; }, critic, kFdStep);
    out.critic = max_relative_error(analytic, fd);
  }

  const Mat means = uniform_matrix(act_dim, n, rng, -0.5, 0.5);
  const Mat actions = means + normal_matrix(act_dim, n, rng, 0.3);
  auto cov_error = [&](DgnVariant variant) {
    DgnConfig dcfg;
    dcfg.variant = variant;
    dcfg.hidden = {8, 8};
    SamplingPolicy p = make_sampling_policy(obs_dim, act_dim, dcfg, rng);
    randomize_output_layer(p.covariance.net, rng, 0.3);
    if (p.residual) randomize_output_layer(p.residual->net, rng, 0.3);
    const NllResult r = nll_given_means(p, obs, means, actions, Mode::eval, unused);
    const NetGrad fd = finite_diff_grad(
        [&](const Net& net) {
          SamplingPolicy q = p;
          q.covariance.net = net;
          return nll_given_means(q, obs, means, actions, Mode::eval, unused).loss;
        },
        p.covariance.net, kFdStep);
    double err = max_relative_error(r.cov_grad, fd);
    if (p.residual) {
      const NetGrad fd_res = finite_diff_grad(
          [&](const Net& net) {
            SamplingPolicy q = p;
            q.residual->net = net;
            return nll_given_means(q, obs, means, actions, Mode::eval, unused).loss;
          },
          p.residual->net, kFdStep);
      out.residual = max_relative_error(*r.residual_grad, fd_res);
    }
    return err;
  };
  out.covnet = cov_error(DgnVariant::zero_mean);
  out.global_cov = cov_error(DgnVariant::global_ablation);
  out.covnet = std::max(out.covnet, cov_error(DgnVariant::residual));

  {
    BcConfig bcfg;
    bcfg.hidden = {8, 8};
    BcPolicy bc = make_bc_policy(obs_dim, act_dim, bcfg, rng);
    bc.log_std.biases[0] = uniform_matrix(act_dim, 1, rng, -1.5, 0.0);
    const Mat targets = uniform_matrix(act_dim, n, rng, -0.9, 0.9);
    const BcLoss l = bc_nll(bc, obs, targets, Mode::eval, unused);
    out.bc_mean = max_relative_error(l.mean_grad, finite_diff_grad(
                                                      [&](const Net& net) {
                                                        BcPolicy b = bc;
                                                        b.mean_net = net;
                                                        return bc_nll(b, obs, targets, Mode::eval, unused).loss;
                                                      },
                                                      bc.mean_net, kFdStep));
    out.bc_std = max_relative_error(l.std_grad, finite_diff_grad(
                                                    [&](const Net& net) {
                                                      BcPolicy b = bc;
                                                      b.log_std = net;
                                                      return bc_nll(b, obs, targets, Mode::eval, unused).loss;
                                                    },
                                                    bc.log_std, kFdStep));
  }
  return out;
}

CheckResult check_gradients(double tol, int trials) {
  GradientErrors worst;
  for (int t = 0; t < trials; ++t) {
    const GradientErrors e = gradient_errors(1000 + static_cast<std::uint64_t>(t));
    worst.actor = std::max(worst.actor, e.actor);
    worst.critic = std::max(worst.critic, e.critic);
    worst.covnet = std::max(worst.covnet, e.covnet);
    worst.global_cov = std::max(worst.global_cov, e.global_cov);
    worst.residual = std::max(worst.residual, e.residual);
    worst.bc_mean = std::max(worst.bc_mean, e.bc_mean);
    worst.bc_std = std::max(worst.bc_std, e.bc_std);
  }
  std::ostringstream d;
  d << "max rel err actor " << worst.actor << " critic " << worst.critic << " covnet " << worst.covnet << " global "
    << worst.global_cov << " residual " << worst.residual << " bc_mean " << worst.bc_mean << " bc_std "
    << worst.bc_std << " (tol " << tol << ")";
  return {"gradient oracle", worst.worst() < tol, d.str()};
}

double covariance_fidelity_error(int nets, long draws, std::uint64_t seed) {
  SeededRng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < nets; ++k) {
    const Index d = 2 + k % 2, obs_dim = 4;
    DgnConfig cfg;
    cfg.hidden = {16, 16};
    SamplingPolicy p = make_sampling_policy(obs_dim, d, cfg, rng);
    randomize_output_layer(p.covariance.net, rng, 0.5);
    const Vec obs = normal_matrix(obs_dim, 1, rng).col(0);
    const Mat target = covariance(p, obs);
    Vec sum = Vec::Zero(d);
    Mat outer = Mat::Zero(d, d);
    for (long i = 0; i < draws; ++i) {
      const Vec x = sample_noise(p, obs, rng);
      sum += x;
      outer.noalias() += x * x.transpose();
    }
    const double n = static_cast<double>(draws);
    const Vec mean = sum / n;
    const Mat emp = (outer - n * mean * mean.transpose()) / (n - 1.0);
    worst = std::max(worst, (emp - target).norm() / target.norm());
  }
  return worst;
}

CheckResult check_covariance_fidelity(int nets, long draws, double tol) {
  const double err = covariance_fidelity_error(nets, draws, 2024);
  return {"covariance fidelity", err < tol,
          fmt("max relative Frobenius error %.4f", err) + " over " + std::to_string(nets) + " nets x " +
              std::to_string(draws) + " draws (tol " + fmt("%g", tol) + ")"};
}

namespace {

DgnConfig oracle_fit_config(DgnVariant variant, int epochs) {
  DgnConfig cfg;
  cfg.variant = variant;
  cfg.learning_rate = 1e-3;
  cfg.epochs_per_update = epochs;
  return cfg;
}

Net frozen_actor(Index obs_dim, Index act_dim, SeededRng& rng) {
  return mlp_init<Scalar>({obs_dim, 16, act_dim}, 0.0, rng);
}

}  // namespace

NllRecovery nll_recovery(std::uint64_t seed, Index samples, int epochs) {
  SeededRng rng(seed);
  const Index obs_dim = 3, d = 2;
  Mat l_star(d, d);
  l_star << 0.3, 0.0, 0.15, 0.2;
  const Mat sigma = l_star * l_star.transpose();
  const Net actor = frozen_actor(obs_dim, d, rng);
  const Mat obs = normal_matrix(obs_dim, samples, rng);
  const Mat actions = actor_mean(actor, obs) + l_star * normal_matrix(d, samples, rng);

  SamplingPolicy p = make_sampling_policy(obs_dim, d, oracle_fit_config(DgnVariant::zero_mean, epochs), rng);
  fit_pairs(p, actor, obs, actions, rng);
  return {mean_nll(p, actor, obs, actions), half_logdet_2pie(sigma)};
}

CheckResult check_nll_recovery(double tol, Index samples, int epochs) {
  const NllRecovery r = nll_recovery(31, samples, epochs);
  const double gap = std::abs(r.fitted - r.optimum);
  return {"NLL recovery", gap < tol,
          fmt("fitted %.5f", r.fitted) + fmt(" optimum %.5f", r.optimum) + fmt(" gap %.5f", gap) +
              fmt(" nats (tol %g)", tol)};
}

AblationResult state_conditioning_ablation(std::uint64_t seed, Index samples, int epochs) {
  SeededRng rng(seed);
  const Index obs_dim = 2, d = 2;
  Mat l0(d, d), l1(d, d);
  l0 << 0.4, 0.0, 0.3, 0.1;
  l1 << 0.05, 0.0, -0.02, 0.3;
  const Net actor = frozen_actor(obs_dim, d, rng);
  Mat obs(obs_dim, samples), actions(d, samples);
  for (Index j = 0; j < samples; ++j) {
    const bool second = j % 2 == 1;
    const double c = second ? -1.0 : 1.0;
    obs.col(j) << c + 0.1 * rng.normal(), c + 0.1 * rng.normal();
  }
  const Mat means = actor_mean(actor, obs);
  for (Index j = 0; j < samples; ++j) {
    const Vec z = normal_matrix(d, 1, rng).col(0);
    actions.col(j) = means.col(j) + (j % 2 == 1 ? l1 : l0) * z;
  }
  AblationResult r;
  const Mat s0 = l0 * l0.transpose(), s1 = l1 * l1.transpose();
  r.covnet_optimum = 0.5 * (half_logdet_2pie(s0) + half_logdet_2pie(s1));
  r.global_optimum = half_logdet_2pie(0.5 * (s0 + s1));

  SamplingPolicy cond = make_sampling_policy(obs_dim, d, oracle_fit_config(DgnVariant::zero_mean, epochs), rng);
  SamplingPolicy global = make_sampling_policy(obs_dim, d, oracle_fit_config(DgnVariant::global_ablation, epochs), rng);
  fit_pairs(cond, actor, obs, actions, rng);
  fit_pairs(global, actor, obs, actions, rng);
  r.covnet = mean_nll(cond, actor, obs, actions);
  r.global = mean_nll(global, actor, obs, actions);
  return r;
}

CheckResult check_state_conditioning(double margin, Index samples, int epochs) {
  const AblationResult r = state_conditioning_ablation(47, samples, epochs);
  return {"state-conditioning ablation", r.global - r.covnet >= margin,
          fmt("CovNet %.4f", r.covnet) + fmt(" GlobalCov %.4f", r.global) + fmt(" gap %.4f", r.global - r.covnet) +
              fmt(" nats (analytic gap %.4f,", r.global_optimum - r.covnet_optimum) + fmt(" need >= %g)", margin)};
}

CheckResult check_schedules() {
  std::vector<std::string> failures;
  const AnnealSchedule anneal{true, 30000.0};
  const ShutoffMonitor off;
  if (noise_scale(anneal, off, 0) != 1.0) failures.push_back("anneal(0) != 1");
  const double at_tau = noise_scale(anneal, off, 30000);
  if (std::abs(at_tau - std::exp(-1.0)) > 1e-12) failures.push_back("anneal(tau) != 1/e");
  if (noise_scale(AnnealSchedule{}, off, 123456) != 1.0) failures.push_back("constant schedule != 1");

  const std::vector<int> outcomes{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0};
  // Reference: first episode whose trailing 10-window mean reaches 0.5.
  long expected = -1;
  for (std::size_t i = 9; i < outcomes.size() && expected < 0; ++i) {
    int hits = 0;
    for (std::size_t k = i - 9; k <= i; ++k) hits += outcomes[k];
    if (hits >= 5) expected = static_cast<long>(i);
  }
  ShutoffMonitor m(true, 10, 0.5);
  ShutoffMonitor disabled(false, 10, 0.5);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    m.record(outcomes[i] == 1);
    disabled.record(outcomes[i] == 1);
    const bool should = expected >= 0 && static_cast<long>(i) >= expected;
    if (m.tripped() != should) failures.push_back("shutoff state wrong after episode " + std::to_string(i));
    if (disabled.tripped()) failures.push_back("disabled monitor tripped");
  }
  if (noise_scale(anneal, m, 10) != 0.0) failures.push_back("tripped shutoff does not zero the noise");
  std::string detail = fmt("anneal(tau) = %.15f", at_tau) + ", shutoff trips at episode " + std::to_string(expected);
  for (const auto& f : failures) detail += "; " + f;
  return {"schedule semantics", failures.empty(), detail};
}

CheckResult check_ibrl_balance(long draws, double tol) {
  SeededRng rng(99);
  const IbrlConfig cfg{10.0, IbrlMode::soft};
  long il = 0;
  for (long i = 0; i < draws; ++i) il += ibrl_select(0.37, 0.37, cfg, rng) ? 1 : 0;
  const double frac = static_cast<double>(il) / static_cast<double>(draws);
  return {"IBRL soft balance", std::abs(frac - 0.5) <= tol,
          fmt("IL arm %.4f", frac) + " over " + std::to_string(draws) + fmt(" draws (need 0.5 +/- %g)", tol)};
}

CheckResult check_kl_cases(double tol) {
  const Vec z1 = Vec::Zero(1), o1 = Vec::Ones(1);
  const Mat i1 = Mat::Identity(1, 1);
  Mat two(1, 1);
  two << 4.0;
  Mat s(2, 2);
  s << 0.5, 0.1, 0.1, 0.3;
  const Vec mu = (Vec(2) << 0.2, -0.4).finished();
  const double a = gaussian_kl(mu, s, mu, s);
  const double b = gaussian_kl(z1, i1, o1, i1);
  const double c = gaussian_kl(z1, two, z1, i1);
  const double c_ref = 0.5 * (4.0 - 1.0 + std::log(1.0 / 4.0));
  const bool ok = std::abs(a) <= tol && std::abs(b - 0.5) <= tol && std::abs(c - c_ref) <= tol;
  return {"closed-form KL cases", ok, fmt("identical %.3g", a) + fmt(", unit shift %.12f", b) + fmt(", var 4 vs 1 %.12f", c)};
}

bool files_identical(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  const std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return sa == sb;
}

CheckResult check_rft_equivalence(const ExperimentConfig& base) {
  ExperimentConfig rlpd = base, rft = base;
  rlpd.method = Method::rlpd;
  rft.method = Method::rft;
  rft.rft.bc_weight = 0.0;
  rlpd.output_dir = base.output_dir / "rlpd";
  rft.output_dir = base.output_dir / "rft_lambda0";
  const TrainResult a = train(rlpd);
  const TrainResult b = train(rft);
  const Checkpoint ca = load_checkpoint(a.final_checkpoint), cb = load_checkpoint(b.final_checkpoint);
  const bool csv_same = files_identical(a.metrics_path, b.metrics_path);
  const bool params_same = ca.tensors == cb.tensors;
  return {"RFT(lambda=0) == RLPD", csv_same && params_same,
          std::string("metrics ") + (csv_same ? "identical" : "differ") + ", parameters " +
              (params_same ? "identical" : "differ") + " after " + std::to_string(a.env_steps) + " steps"};
}

CheckResult check_determinism(const ExperimentConfig& config) {
  ExperimentConfig a = config, b = config;
  a.output_dir = config.output_dir / "run_a";
  b.output_dir = config.output_dir / "run_b";
  const TrainResult ra = train(a);
  const TrainResult rb = train(b);
  const bool same = files_identical(ra.metrics_path, rb.metrics_path);
  return {"determinism", same,
          std::string("metrics CSVs ") + (same ? "byte-identical" : "differ") + " (" + std::to_string(ra.rows.size()) +
              " rows)"};
}

std::filesystem::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("dgnlab_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ExperimentConfig quick_maze_config(const std::filesystem::path& dir, long total_steps) {
  std::filesystem::create_directories(dir);
  const auto demo_path = dir / "maze_demos.jsonl";
  if (!std::filesystem::exists(demo_path)) {
    const EnvSpec spec = make_env_spec(EnvName::point_maze);
    save_demos(generate_demos(spec, 10, 0.05, {{ExpertMode::A, 0.5}, {ExpertMode::B, 0.5}}, 5), demo_path);
  }
  ExperimentConfig c;
  c.env = EnvName::point_maze;
  c.method = Method::dgn;
  c.demo_path = demo_path;
  c.total_steps = total_steps;
  c.eval_interval = 250;
  c.eval_episodes = 5;
  c.warmup_episodes = 2;
  c.output_dir = dir;
  c.agent.ensemble_size = 2;
  c.agent.utd_ratio = 1;
  c.agent.batch_size = 32;
  c.agent.actor_hidden = {32, 32};
  c.agent.critic_hidden = {32, 32};
  c.dgn.hidden = {16, 16};
  c.dgn.update_interval = 250;
  return c;
}

std::vector<CheckResult> run_selftest(const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> out;
  auto record = [&](CheckResult r) {
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  };
  record(check_gradients(1e-4, 1));
  record(check_covariance_fidelity(4, 20000, 0.05));
  record(check_nll_recovery(0.05, 2000, 60));
  record(check_state_conditioning(0.1, 2000, 60));
  record(check_schedules());
  record(check_ibrl_balance(100000, 0.01));
  record(check_kl_cases(1e-9));
  const auto dir = scratch_dir("selftest");
  record(check_rft_equivalence(quick_maze_config(dir / "rft", 600)));
  record(check_determinism(quick_maze_config(dir / "det", 600)));
  std::filesystem::remove_all(dir);
  return out;
}

}  // namespace dgnlab
