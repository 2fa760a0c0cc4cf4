#include "dgnlab/dgn.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace dgnlab {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

/// Input the covariance head sees: the observations, or nothing for the global ablation.
Mat head_input(const CovarianceHead& head, const Mat& obs) {
  return head.state_conditioned ? obs : Mat(0, obs.cols());
}

std::vector<Index> sizes(Index in, const std::vector<Index>& hidden, Index out) {
  std::vector<Index> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

Mat gather_columns(const Mat& m, const std::vector<Index>& idx, std::size_t begin, std::size_t end) {
  Mat out(m.rows(), static_cast<Index>(end - begin));
  for (std::size_t j = begin; j < end; ++j) out.col(static_cast<Index>(j - begin)) = m.col(idx[j]);
  return out;
}

}  // namespace

std::string to_string(DgnVariant v) {
  switch (v) {
    case DgnVariant::zero_mean: return "zero_mean";
    case DgnVariant::residual: return "residual";
    case DgnVariant::global_ablation: return "global_ablation";
  }
  return "unknown";
}

DgnVariant parse_dgn_variant(std::string_view tag) {
  if (tag == "zero_mean") return DgnVariant::zero_mean;
  if (tag == "residual") return DgnVariant::residual;
  if (tag == "global_ablation") return DgnVariant::global_ablation;
  throw ConfigError("unknown DGN variant '" + std::string(tag) + "'");
}

std::string to_string(NoiseSchedule s) {
  switch (s) {
    case NoiseSchedule::none: return "none";
    case NoiseSchedule::anneal: return "anneal";
    case NoiseSchedule::shutoff: return "shutoff";
  }
  return "unknown";
}

NoiseSchedule parse_noise_schedule(std::string_view tag) {
  if (tag == "none") return NoiseSchedule::none;
  if (tag == "anneal") return NoiseSchedule::anneal;
  if (tag == "shutoff") return NoiseSchedule::shutoff;
  throw ConfigError("unknown noise schedule '" + std::string(tag) + "'");
}

void DgnConfig::validate() const {
  if (!(sigma_min > 0.0)) throw ConfigError("dgn: sigma_min must be positive");
  if (!(initial_std > 0.0)) throw ConfigError("dgn: initial_std must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dgn: dropout must lie in [0, 1)");
  if (update_interval < 1) throw ConfigError("dgn: update_interval must be >= 1");
  if (epochs_per_update < 0) throw ConfigError("dgn: epochs_per_update must be >= 0");
  if (fit_batch_size < 1) throw ConfigError("dgn: fit_batch_size must be >= 1");
  if (schedule == NoiseSchedule::anneal && !(anneal_tau > 0.0)) throw ConfigError("dgn: anneal tau must be positive");
  if (schedule == NoiseSchedule::shutoff && (shutoff_window < 1 || shutoff_threshold < 0.0 || shutoff_threshold > 1.0))
    throw ConfigError("dgn: shutoff needs window >= 1 and threshold in [0, 1]");
}

ShutoffMonitor::ShutoffMonitor(bool enabled, int window, double threshold)
    : enabled_(enabled), window_(window), threshold_(threshold) {
  if (window < 1) throw ContractError("ShutoffMonitor: window must be >= 1");
}

void ShutoffMonitor::record(bool success) {
  recent_.push_back(success);
  if (static_cast<int>(recent_.size()) > window_) recent_.pop_front();
  if (!enabled_ || tripped_ || static_cast<int>(recent_.size()) < window_) return;
  const auto hits = std::count(recent_.begin(), recent_.end(), true);
  if (static_cast<double>(hits) / window_ >= threshold_) tripped_ = true;
}

void ShutoffMonitor::restore(std::deque<bool> recent, bool tripped) {
  recent_ = std::move(recent);
  tripped_ = tripped;
}

Index tril_size(Index d) { return d * (d + 1) / 2; }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

SamplingPolicy make_sampling_policy(Index obs_dim, Index act_dim, const DgnConfig& config, SeededRng& rng) {
  config.validate();
  SamplingPolicy p;
  p.variant = config.variant;
  p.obs_dim = obs_dim;
  p.act_dim = act_dim;
  p.update_interval = config.update_interval;
  p.epochs_per_update = config.epochs_per_update;
  p.fit_batch_size = config.fit_batch_size;
  p.schedule = {config.schedule == NoiseSchedule::anneal, config.anneal_tau};
  p.shutoff = ShutoffMonitor(config.schedule == NoiseSchedule::shutoff, std::max(config.shutoff_window, 1),
                             config.shutoff_threshold);

  AdamWConfig opt;
  opt.learning_rate = config.learning_rate;
  opt.weight_decay = config.weight_decay;

  const Index k = tril_size(act_dim);
  CovarianceHead& head = p.covariance;
  head.diag_floor = config.sigma_min;
  head.state_conditioned = config.variant != DgnVariant::global_ablation;
  head.net = head.state_conditioned
                 ? mlp_init<Scalar>(sizes(obs_dim, config.hidden, k), config.dropout_rate, rng, 0.01)
                 : mlp_init<Scalar>({0, k}, 0.0, rng);
  // Start from A = initial_std * I.
  Vec& bias = head.net.biases.back();
  bias.setZero();
  for (Index i = 0, idx = 0; i < act_dim; ++i)
    for (Index j = 0; j <= i; ++j, ++idx)
      if (i == j) bias[idx] = inverse_softplus(config.initial_std);
  head.optimizer = adamw_init(head.net, opt);

  if (config.variant == DgnVariant::residual) {
    ResidualHead r;
    r.net = mlp_init<Scalar>(sizes(obs_dim, config.hidden, act_dim), config.dropout_rate, rng, 0.01);
    r.net.biases.back().setZero();
    r.optimizer = adamw_init(r.net, opt);
    p.residual = std::move(r);
  }
  return p;
}

Mat chol_from_raw(const Vec& raw, Index d, double floor) {
  require_shape(raw.size() == tril_size(d), "chol_from_raw: expected d(d+1)/2 raw entries");
  if (!raw.allFinite()) throw NumericError("chol_from_raw: non-finite raw output");
  Mat a = Mat::Zero(d, d);
  for (Index i = 0, k = 0; i < d; ++i)
    for (Index j = 0; j <= i; ++j, ++k) a(i, j) = i == j ? std::max(softplus(raw[k]), floor) : raw[k];
  return a;
}

Mat chol_factor(const SamplingPolicy& policy, const Vec& obs) {
  const CovarianceHead& head = policy.covariance;
  if (head.state_conditioned) require_shape(obs.size() == policy.obs_dim, "chol_factor: obs has wrong dimension");
  const Vec raw = mlp_eval(head.net, head_input(head, Mat(obs))).col(0);
  return chol_from_raw(raw, policy.act_dim, head.diag_floor);
}

Mat covariance(const SamplingPolicy& policy, const Vec& obs) {
  const Mat a = chol_factor(policy, obs);
  return a * a.transpose();
}

NllResult nll_given_means(const SamplingPolicy& policy, const Mat& obs, const Mat& actor_means,
                          const Mat& actions, Mode mode, SeededRng& rng) {
  const Index d = policy.act_dim;
  const Index n = obs.cols();
  require_shape(obs.rows() == policy.obs_dim, "nll: obs has wrong dimension");
  require_shape(actor_means.rows() == d && actions.rows() == d && actor_means.cols() == n && actions.cols() == n,
                "nll: action batch shape mismatch");
  if (n == 0) throw ContractError("nll: empty batch");

  const CovarianceHead& head = policy.covariance;
  MlpCache<Scalar> cov_cache;
  const Mat raw = mlp_forward(head.net, head_input(head, obs), mode, rng, &cov_cache);

  Mat delta = actions - actor_means;
  MlpCache<Scalar> res_cache;
  if (policy.residual) delta -= mlp_forward(policy.residual->net, obs, mode, rng, &res_cache);
  if (!delta.allFinite()) throw NumericError("nll: non-finite action residual");

  Mat raw_grad(raw.rows(), n);
  Mat delta_grad(d, n);
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Index c = 0; c < n; ++c) {
    const Vec r = raw.col(c);
    const Mat a = chol_from_raw(r, d, head.diag_floor);
    const auto tri = a.triangularView<Eigen::Lower>();
    const Vec w = tri.solve(delta.col(c));
    const Vec v = tri.transpose().solve(w);
    total += 0.5 * w.squaredNorm() + a.diagonal().array().log().sum() + static_cast<double>(d) * kHalfLog2Pi;
    delta_grad.col(c) = v * inv_n;
    for (Index i = 0, k = 0; i < d; ++i) {
      for (Index j = 0; j <= i; ++j, ++k) {
        double g = -v[i] * w[j];
        if (i == j) {
          g += 1.0 / a(i, i);
          g *= softplus(r[k]) >= head.diag_floor ? sigmoid(r[k]) : 0.0;
        }
        raw_grad(k, c) = g * inv_n;
      }
    }
  }

  NllResult out;
  out.loss = total * inv_n;
  if (!std::isfinite(out.loss)) throw NumericError("nll: non-finite loss");
  out.cov_grad = mlp_backward(head.net, cov_cache, raw_grad);
  if (policy.residual) out.residual_grad = mlp_backward(policy.residual->net, res_cache, Mat(-delta_grad));
  return out;
}

NllResult nll(const SamplingPolicy& policy, const Net& actor, const Mat& obs, const Mat& actions, Mode mode,
              SeededRng& rng) {
  return nll_given_means(policy, obs, actor_mean(actor, obs), actions, mode, rng);
}

double mean_nll(const SamplingPolicy& policy, const Net& actor, const Mat& obs, const Mat& actions) {
  SeededRng unused(0);
  return nll(policy, actor, obs, actions, Mode::eval, unused).loss;
}

FitReport fit_pairs(SamplingPolicy& policy, const Net& actor, const Mat& obs, const Mat& actions,
                    SeededRng& rng) {
  FitReport report;
  const Index n = obs.cols();
  if (n == 0 || policy.epochs_per_update == 0) return report;
  const Mat means = actor_mean(actor, obs);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const std::size_t bs = static_cast<std::size_t>(policy.fit_batch_size);
  for (int epoch = 0; epoch < policy.epochs_per_update; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      const NllResult r = nll_given_means(policy, gather_columns(obs, order, begin, end),
                                          gather_columns(means, order, begin, end),
                                          gather_columns(actions, order, begin, end), Mode::train, rng);
      adamw_step(policy.covariance.net, r.cov_grad, policy.covariance.optimizer);
      if (policy.residual) adamw_step(policy.residual->net, *r.residual_grad, policy.residual->optimizer);
      epoch_loss += r.loss;
      ++batches;
      ++report.optimizer_steps;
    }
    report.mean_loss = epoch_loss / batches;
    ++report.epochs;
  }
  return report;
}

FitReport fit(SamplingPolicy& policy, const Net& actor, const DemoStore& demos, SeededRng& rng) {
  const Index n = static_cast<Index>(demos.size());
  Mat obs(policy.obs_dim, n), act(policy.act_dim, n);
  for (Index j = 0; j < n; ++j) {
    obs.col(j) = demos.at(static_cast<std::size_t>(j)).obs;
    act.col(j) = demos.at(static_cast<std::size_t>(j)).action;
  }
  ++policy.fit_calls;
  return fit_pairs(policy, actor, obs, act, rng);
}

double noise_scale(const AnnealSchedule& schedule, const ShutoffMonitor& shutoff, long t) {
  if (t < 0) throw ContractError("noise_scale: negative step");
  if (shutoff.tripped()) return 0.0;
  if (schedule.enabled) return std::exp(-static_cast<double>(t) / schedule.tau);
  return 1.0;
}

double noise_scale(const SamplingPolicy& policy, long t) { return noise_scale(policy.schedule, policy.shutoff, t); }

Vec sample_noise(const SamplingPolicy& policy, const Vec& obs, SeededRng& rng) {
  Vec eps = chol_factor(policy, obs) * gaussian_draw(rng, policy.act_dim);
  if (policy.residual) eps += mlp_eval(policy.residual->net, obs);
  return eps;
}

Vec sample(const SamplingPolicy& policy, const Net& actor, const Vec& obs, long t, SeededRng& rng) {
  const Vec mean = actor_mean(actor, obs);
  const double scale = noise_scale(policy, t);
  if (scale == 0.0) return mean;
  return (mean + scale * sample_noise(policy, obs, rng)).cwiseMax(-1.0).cwiseMin(1.0);
}

void record_episode(SamplingPolicy& policy, bool success) { policy.shutoff.record(success); }

}  // namespace dgnlab
