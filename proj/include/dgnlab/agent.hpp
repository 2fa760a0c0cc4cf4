#pragma once

#include "dgnlab/adamw.hpp"
#include "dgnlab/mlp.hpp"
#include "dgnlab/replay.hpp"

#include <functional>
#include <vector>

namespace dgnlab {

using Net = MlpParams<Scalar>;
using NetGrad = GradBundle<Scalar>;
using NetOptimizer = AdamWState<Scalar>;

/// Deterministic-mean actor-critic with an RLPD-style critic ensemble.
struct AgentConfig {
  double gamma = 0.99;
  double polyak = 0.01;
  int ensemble_size = 5;
  int target_subset = 2;
  int utd_ratio = 5;
  int actor_update_interval = 2;
  double explore_std = 0.1;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  int batch_size = 128;
  std::vector<Index> actor_hidden{256, 256, 256};
  std::vector<Index> critic_hidden{256, 256, 256};
  double actor_dropout_rate = 0.0;

  void validate() const;
};

struct AgentState {
  AgentConfig config;
  Index obs_dim = 0;
  Index act_dim = 0;
  Net actor;  // pre-tanh mean; actions are tanh(actor(obs))
  std::vector<Net> critics;
  std::vector<Net> target_critics;
  NetOptimizer actor_opt;
  std::vector<NetOptimizer> critic_opts;
  long env_step = 0;
  long critic_updates = 0;
  long actor_updates = 0;
};

AgentState make_agent(Index obs_dim, Index act_dim, const AgentConfig& config, SeededRng& rng);

/// tanh(actor(obs)) in eval mode, for a bare actor net.
Mat actor_mean(const Net& actor, const Mat& obs);
Vec actor_mean(const Net& actor, const Vec& obs);

/// tanh(actor(obs)), eval mode.
Mat act_eval(const AgentState& agent, const Mat& obs);
Vec act_eval(const AgentState& agent, const Vec& obs);

/// clip(act_eval + explore_std * z) to [-1, 1]^d.
Vec act_explore_baseline(const AgentState& agent, const Vec& obs, SeededRng& rng);

/// Stacks obs on top of actions, one sample per column.
Mat critic_input(const Mat& obs, const Mat& act);

/// Q_i(s, a) for every online critic; row i holds critic i.
Mat ensemble_q(const AgentState& agent, const Mat& obs, const Mat& act);

/// y = r + gamma (1 - done) min_{i in subset} Qtarget_i(s', act_eval(s')), with a
/// fresh random subset of size target_subset.
Vec td_targets(const AgentState& agent, const Batch& batch, SeededRng& rng);

struct CriticLoss {
  double loss = 0.0;
  NetGrad grad;
};

/// mean_b (Q(sa_b) - y_b)^2 and its gradient for one critic.
CriticLoss critic_regression(const Net& critic, const Mat& sa, const Vec& targets, Mode mode, SeededRng& rng);

/// One squared-error regression step per critic toward td_targets.
/// Returns the mean squared TD error over critics and samples.
double critic_update(AgentState& agent, const Batch& batch, SeededRng& rng);

/// dQ/da for a batch of (obs, action) columns; the actor ascends this signal.
using ActionGradFn = std::function<Mat(const Mat& obs, const Mat& actions)>;

/// Gradient of -mean_b Q(s_b, tanh(actor(s_b))) with respect to the actor,
/// given the action gradient of Q. Dropout is active in train mode.
NetGrad actor_ascent_grad(const Net& actor, const Mat& obs, const ActionGradFn& dq_da, Mode mode,
                          SeededRng& rng);

/// Mean over the ensemble of dQ_i/da.
Mat ensemble_action_grad(const AgentState& agent, const Mat& obs, const Mat& actions);

/// -mean_b mean_i Q_i(s_b, tanh(actor(s_b))), eval mode.
double actor_loss(const AgentState& agent, const Mat& obs);

/// One AdamW step of the actor up the ensemble-mean Q.
void actor_update(AgentState& agent, const Batch& batch, SeededRng& rng);

/// target <- polyak * online + (1 - polyak) * target for every critic.
void target_update(AgentState& agent);

}  // namespace dgnlab
