#pragma once

// Data-guided exploration noise: actions are drawn from N(mu_theta(s), Sigma_phi(s))
// where mu_theta is the RL actor and Sigma_phi = A A^T is fit by maximum
// likelihood on demo actions with the actor held fixed.

#include "dgnlab/agent.hpp"
#include "dgnlab/replay.hpp"

#include <deque>
#include <optional>
#include <string>
#include <string_view>

namespace dgnlab {

enum class DgnVariant { zero_mean, residual, global_ablation };
std::string to_string(DgnVariant v);
DgnVariant parse_dgn_variant(std::string_view tag);

enum class NoiseSchedule { none, anneal, shutoff };
std::string to_string(NoiseSchedule s);
NoiseSchedule parse_noise_schedule(std::string_view tag);

struct DgnConfig {
  DgnVariant variant = DgnVariant::zero_mean;
  std::vector<Index> hidden{128, 128};
  double dropout_rate = 0.5;
  double learning_rate = 1e-4;
  double weight_decay = 3e-2;
  double sigma_min = 1e-3;
  /// Diagonal of A before the first fit.
  double initial_std = 0.1;
  int update_interval = 1000;
  int epochs_per_update = 2;
  int fit_batch_size = 128;
  NoiseSchedule schedule = NoiseSchedule::shutoff;
  double anneal_tau = 30000.0;
  int shutoff_window = 10;
  double shutoff_threshold = 0.5;

  void validate() const;
};

/// Produces the d(d+1)/2 raw Cholesky entries. When not state-conditioned the
/// net is a bias-only layer with zero inputs, so A is one learned matrix.
struct CovarianceHead {
  Net net;
  double diag_floor = 1e-3;
  NetOptimizer optimizer;
  bool state_conditioned = true;
};

/// Learned mean offset mu_phi(s) of the residual variant.
struct ResidualHead {
  Net net;
  NetOptimizer optimizer;
};

struct AnnealSchedule {
  bool enabled = false;
  double tau = 0.0;
};

/// Latching rule: trips once the last `window` episodes reach mean success >= threshold.
class ShutoffMonitor {
 public:
  ShutoffMonitor() = default;
  ShutoffMonitor(bool enabled, int window, double threshold);

  void record(bool success);
  bool tripped() const noexcept { return tripped_; }
  bool enabled() const noexcept { return enabled_; }
  int window() const noexcept { return window_; }
  double threshold() const noexcept { return threshold_; }
  const std::deque<bool>& history() const noexcept { return recent_; }
  /// Restores checkpointed state.
  void restore(std::deque<bool> recent, bool tripped);

 private:
  bool enabled_ = false;
  int window_ = 10;
  double threshold_ = 0.5;
  std::deque<bool> recent_;
  bool tripped_ = false;
};

struct SamplingPolicy {
  DgnVariant variant = DgnVariant::zero_mean;
  Index obs_dim = 0;
  Index act_dim = 0;
  CovarianceHead covariance;
  std::optional<ResidualHead> residual;
  AnnealSchedule schedule;
  ShutoffMonitor shutoff;
  int update_interval = 1000;
  int epochs_per_update = 2;
  int fit_batch_size = 128;
  long fit_calls = 0;
};

SamplingPolicy make_sampling_policy(Index obs_dim, Index act_dim, const DgnConfig& config, SeededRng& rng);

Index tril_size(Index d);
double softplus(double x);

/// Lower-triangular factor from raw entries (row-major lower triangle); the
/// diagonal is max(softplus(raw), floor).
Mat chol_from_raw(const Vec& raw, Index d, double floor);

/// A_phi(obs) in eval mode. The global ablation ignores obs.
Mat chol_factor(const SamplingPolicy& policy, const Vec& obs);

/// Sigma_phi(obs) = A A^T.
Mat covariance(const SamplingPolicy& policy, const Vec& obs);

struct NllResult {
  double loss = 0.0;  // mean over the batch
  NetGrad cov_grad;
  std::optional<NetGrad> residual_grad;
};

/// Mean Gaussian NLL of `actions` under N(actor_means [+ mu_phi], A A^T) and its
/// gradient with respect to the covariance (and residual) parameters. The
/// actor means are constants here.
NllResult nll_given_means(const SamplingPolicy& policy, const Mat& obs, const Mat& actor_means,
                          const Mat& actions, Mode mode, SeededRng& rng);

/// Same, with the actor means computed from a frozen actor.
NllResult nll(const SamplingPolicy& policy, const Net& actor, const Mat& obs, const Mat& actions,
              Mode mode, SeededRng& rng);

/// Eval-mode mean NLL of the given pairs.
double mean_nll(const SamplingPolicy& policy, const Net& actor, const Mat& obs, const Mat& actions);

struct FitReport {
  int epochs = 0;
  long optimizer_steps = 0;
  double mean_loss = 0.0;  // average minibatch loss of the last epoch
};

/// epochs_per_update shuffled passes over the demo (s, a) pairs, one AdamW
/// step per minibatch. The actor is read, never written.
FitReport fit(SamplingPolicy& policy, const Net& actor, const DemoStore& demos, SeededRng& rng);

/// Same, over explicit (obs, action) columns.
FitReport fit_pairs(SamplingPolicy& policy, const Net& actor, const Mat& obs, const Mat& actions,
                    SeededRng& rng);

/// 0 when the shutoff has tripped, else exp(-t / tau) when annealing, else 1.
double noise_scale(const AnnealSchedule& schedule, const ShutoffMonitor& shutoff, long t);
double noise_scale(const SamplingPolicy& policy, long t);

/// eps = [mu_phi(obs)] + A(obs) z with z ~ N(0, I), before any scaling.
Vec sample_noise(const SamplingPolicy& policy, const Vec& obs, SeededRng& rng);

/// clip(mu_theta(obs) + noise_scale(t) * eps) to [-1, 1]^d.
Vec sample(const SamplingPolicy& policy, const Net& actor, const Vec& obs, long t, SeededRng& rng);

/// Call once per finished training episode.
void record_episode(SamplingPolicy& policy, bool success);

}  // namespace dgnlab
