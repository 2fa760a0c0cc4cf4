#pragma once

#include "dgnlab/agent.hpp"
#include "dgnlab/replay.hpp"

#include <string>
#include <string_view>

namespace dgnlab {

struct BcConfig {
  std::vector<Index> hidden{256, 256, 256};
  int epochs = 20;
  double learning_rate = 1e-3;
  int batch_size = 128;
  /// Stop after this many optimizer steps; 0 means run every epoch.
  long max_steps = 0;

  /// The deliberately weak policy: 100 optimizer steps.
  static BcConfig underfit();
};

/// Gaussian behavior-cloning policy: tanh-squashed mean net, per-dimension std.
struct BcPolicy {
  Net mean_net;
  Net log_std;  // bias-only layer holding one log-std per action dimension
  NetOptimizer mean_opt;
  NetOptimizer std_opt;
  BcConfig config;
  long steps = 0;
};

inline constexpr double kBcMinStd = 1e-3;
inline constexpr double kBcMaxStd = 2.0;

BcPolicy make_bc_policy(Index obs_dim, Index act_dim, const BcConfig& config, SeededRng& rng);

Mat bc_mean(const BcPolicy& bc, const Mat& obs);
Vec bc_mean(const BcPolicy& bc, const Vec& obs);
/// exp(log_std) clamped to [1e-3, 2].
Vec bc_std(const BcPolicy& bc);

struct BcLoss {
  double loss = 0.0;
  NetGrad mean_grad;
  NetGrad std_grad;
};

/// Mean Gaussian NLL of the actions and its gradients.
BcLoss bc_nll(const BcPolicy& bc, const Mat& obs, const Mat& actions, Mode mode, SeededRng& rng);
double bc_mean_nll(const BcPolicy& bc, const Mat& obs, const Mat& actions);

/// Fits a fresh policy by maximum likelihood on the demo pairs.
BcPolicy bc_train(const DemoStore& demos, Index obs_dim, Index act_dim, const BcConfig& config, SeededRng& rng);

/// Continues training an existing policy for `epochs` passes (bounded by max_steps).
void bc_train_epochs(BcPolicy& bc, const Mat& obs, const Mat& actions, int epochs, SeededRng& rng);

// --- RFT: RL with an added imitation term ---------------------------------

struct RftConfig {
  double bc_weight = 0.1;
  int pretrain_epochs = 20;
};

/// lambda * mean_b ||tanh(actor(s_b)) - a_b||^2 on the demo pairs and its gradient.
double rft_imitation_loss(const Net& actor, const Mat& demo_obs, const Mat& demo_actions);

/// Gradient of -mean ensemble Q over rl_batch plus lambda * imitation term over demo_batch.
NetGrad rft_actor_grad(const AgentState& agent, const Batch& rl_batch, const Batch& demo_batch, double lambda,
                       SeededRng& rng);

/// One AdamW step on the combined loss. lambda == 0 reduces exactly to actor_update
/// (the demo batch is not touched).
void rft_actor_update(AgentState& agent, const Batch& rl_batch, const Batch& demo_batch, double lambda,
                      SeededRng& rng);

/// Regresses the actor onto demo actions (squared error) before RL starts.
void rft_pretrain_actor(AgentState& agent, const DemoStore& demos, int epochs, SeededRng& rng);

// --- IBRL-lite: pick between IL and RL proposals by critic value -----------

enum class IbrlMode { soft, greedy };
std::string to_string(IbrlMode m);
IbrlMode parse_ibrl_mode(std::string_view tag);

struct IbrlConfig {
  double beta = 10.0;
  IbrlMode mode = IbrlMode::soft;
};

/// Probability of the IL proposal under soft selection: sigmoid(beta (q_il - q_rl)).
double ibrl_il_probability(double q_il, double q_rl, double beta);

/// True when the IL proposal is chosen. Greedy mode consumes no randomness.
bool ibrl_select(double q_il, double q_rl, const IbrlConfig& config, SeededRng& rng);

struct IbrlChoice {
  Vec action;
  bool chose_il = false;
  double q_il = 0.0;
  double q_rl = 0.0;
};

IbrlChoice ibrl_act(const AgentState& agent, const BcPolicy& bc, const Vec& obs, const IbrlConfig& config,
                    SeededRng& rng);

}  // namespace dgnlab
