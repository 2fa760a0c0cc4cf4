#include "dgnlab/baselines.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace dgnlab {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void demo_matrices(const DemoStore& demos, Index obs_dim, Index act_dim, Mat& obs, Mat& act) {
  const Index n = static_cast<Index>(demos.size());
  obs.resize(obs_dim, n);
  act.resize(act_dim, n);
  for (Index j = 0; j < n; ++j) {
    obs.col(j) = demos.at(static_cast<std::size_t>(j)).obs;
    act.col(j) = demos.at(static_cast<std::size_t>(j)).action;
  }
}

Mat take(const Mat& m, const std::vector<Index>& idx, std::size_t begin, std::size_t end) {
  Mat out(m.rows(), static_cast<Index>(end - begin));
  for (std::size_t j = begin; j < end; ++j) out.col(static_cast<Index>(j - begin)) = m.col(idx[j]);
  return out;
}

/// Gradient of lambda * mean_b ||tanh(actor(s)) - a||^2.
NetGrad imitation_grad(const Net& actor, const Mat& obs, const Mat& actions, double lambda, Mode mode,
                       SeededRng& rng) {
  MlpCache<Scalar> cache;
  const Mat m = mlp_forward(actor, obs, mode, rng, &cache).array().tanh().matrix();
  const double n = static_cast<double>(obs.cols());
  const Mat g = ((2.0 * lambda / n) * (m - actions).array() * (1.0 - m.array().square())).matrix();
  return mlp_backward(actor, cache, g);
}

}  // namespace

BcConfig BcConfig::underfit() {
  BcConfig c;
  c.max_steps = 100;
  return c;
}

BcPolicy make_bc_policy(Index obs_dim, Index act_dim, const BcConfig& config, SeededRng& rng) {
  BcPolicy bc;
  bc.config = config;
  std::vector<Index> sizes{obs_dim};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(act_dim);
  bc.mean_net = mlp_init<Scalar>(sizes, 0.0, rng);
  bc.log_std = mlp_init<Scalar>({0, act_dim}, 0.0, rng);
  bc.log_std.biases[0].setConstant(std::log(0.5));
  AdamWConfig opt;
  opt.learning_rate = config.learning_rate;
  bc.mean_opt = adamw_init(bc.mean_net, opt);
  bc.std_opt = adamw_init(bc.log_std, opt);
  return bc;
}

Mat bc_mean(const BcPolicy& bc, const Mat& obs) { return actor_mean(bc.mean_net, obs); }

Vec bc_mean(const BcPolicy& bc, const Vec& obs) { return actor_mean(bc.mean_net, obs); }

Vec bc_std(const BcPolicy& bc) {
  return bc.log_std.biases[0].array().exp().cwiseMax(kBcMinStd).cwiseMin(kBcMaxStd).matrix();
}

BcLoss bc_nll(const BcPolicy& bc, const Mat& obs, const Mat& actions, Mode mode, SeededRng& rng) {
  const Index n = obs.cols();
  if (n == 0) throw ContractError("bc_nll: empty batch");
  require_shape(actions.cols() == n && actions.rows() == bc.mean_net.output_dim(), "bc_nll: action shape mismatch");
  MlpCache<Scalar> cache;
  const Mat m = mlp_forward(bc.mean_net, obs, mode, rng, &cache).array().tanh().matrix();
  const Vec log_std = bc.log_std.biases[0];
  const Vec sigma = bc_std(bc);
  const Mat z = (actions - m).array().colwise() / sigma.array();
  const double d = static_cast<double>(m.rows());
  const double inv_n = 1.0 / static_cast<double>(n);

  BcLoss out;
  out.loss = 0.5 * z.squaredNorm() * inv_n + sigma.array().log().sum() + d * kHalfLog2Pi;
  if (!std::isfinite(out.loss)) throw NumericError("bc_nll: non-finite loss");
  // dL/dm = -(a - m) / sigma^2 / n, then through tanh.
  const Mat dm = (-(z.array().colwise() / sigma.array()) * inv_n).matrix();
  out.mean_grad = mlp_backward(bc.mean_net, cache, Mat((dm.array() * (1.0 - m.array().square())).matrix()));
  out.std_grad = zeros_like(bc.log_std);
  for (Index j = 0; j < m.rows(); ++j) {
    const bool clamped = std::exp(log_std[j]) < kBcMinStd || std::exp(log_std[j]) > kBcMaxStd;
    out.std_grad.biases[0][j] = clamped ? 0.0 : 1.0 - z.row(j).squaredNorm() * inv_n;
  }
  return out;
}

double bc_mean_nll(const BcPolicy& bc, const Mat& obs, const Mat& actions) {
  SeededRng unused(0);
  return bc_nll(bc, obs, actions, Mode::eval, unused).loss;
}

void bc_train_epochs(BcPolicy& bc, const Mat& obs, const Mat& actions, int epochs, SeededRng& rng) {
  const Index n = obs.cols();
  if (n == 0) throw ContractError("bc_train: empty dataset");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const std::size_t bs = static_cast<std::size_t>(bc.config.batch_size);
  for (int e = 0; e < epochs; ++e) {
    shuffle(order, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      if (bc.config.max_steps > 0 && bc.steps >= bc.config.max_steps) return;
      const std::size_t end = std::min(order.size(), begin + bs);
      const BcLoss l = bc_nll(bc, take(obs, order, begin, end), take(actions, order, begin, end), Mode::train, rng);
      adamw_step(bc.mean_net, l.mean_grad, bc.mean_opt);
      adamw_step(bc.log_std, l.std_grad, bc.std_opt);
      ++bc.steps;
    }
  }
}

BcPolicy bc_train(const DemoStore& demos, Index obs_dim, Index act_dim, const BcConfig& config, SeededRng& rng) {
  if (demos.empty()) throw ContractError("bc_train: empty dataset");
  BcPolicy bc = make_bc_policy(obs_dim, act_dim, config, rng);
  Mat obs, act;
  demo_matrices(demos, obs_dim, act_dim, obs, act);
  if (config.max_steps > 0) {
    // A step budget overrides the epoch count.
    while (bc.steps < config.max_steps) bc_train_epochs(bc, obs, act, 1, rng);
  } else {
    bc_train_epochs(bc, obs, act, config.epochs, rng);
  }
  return bc;
}

double rft_imitation_loss(const Net& actor, const Mat& demo_obs, const Mat& demo_actions) {
  return (actor_mean(actor, demo_obs) - demo_actions).colwise().squaredNorm().mean();
}

NetGrad rft_actor_grad(const AgentState& agent, const Batch& rl_batch, const Batch& demo_batch, double lambda,
                       SeededRng& rng) {
  NetGrad g = actor_ascent_grad(
      agent.actor, rl_batch.obs,
      [&agent](const Mat& obs, const Mat& actions) { return ensemble_action_grad(agent, obs, actions); },
      Mode::train, rng);
  if (lambda != 0.0) add_scaled(g, imitation_grad(agent.actor, demo_batch.obs, demo_batch.action, lambda, Mode::train, rng), 1.0);
  return g;
}

void rft_actor_update(AgentState& agent, const Batch& rl_batch, const Batch& demo_batch, double lambda,
                      SeededRng& rng) {
  if (lambda < 0.0) throw ContractError("rft_actor_update: lambda must be >= 0");
  if (lambda == 0.0) {
    actor_update(agent, rl_batch, rng);
    return;
  }
  const NetGrad g = rft_actor_grad(agent, rl_batch, demo_batch, lambda, rng);
  adamw_step(agent.actor, g, agent.actor_opt);
  ++agent.actor_updates;
}

void rft_pretrain_actor(AgentState& agent, const DemoStore& demos, int epochs, SeededRng& rng) {
  if (demos.empty()) throw ContractError("rft_pretrain_actor: empty dataset");
  Mat obs, act;
  demo_matrices(demos, agent.obs_dim, agent.act_dim, obs, act);
  std::vector<Index> order(static_cast<std::size_t>(obs.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  const std::size_t bs = static_cast<std::size_t>(agent.config.batch_size);
  for (int e = 0; e < epochs; ++e) {
    shuffle(order, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      const NetGrad g = imitation_grad(agent.actor, take(obs, order, begin, end), take(act, order, begin, end), 1.0,
                                       Mode::train, rng);
      adamw_step(agent.actor, g, agent.actor_opt);
    }
  }
}

std::string to_string(IbrlMode m) { return m == IbrlMode::soft ? "soft" : "greedy"; }

IbrlMode parse_ibrl_mode(std::string_view tag) {
  if (tag == "soft") return IbrlMode::soft;
  if (tag == "greedy") return IbrlMode::greedy;
  throw ConfigError("unknown IBRL mode '" + std::string(tag) + "'");
}

double ibrl_il_probability(double q_il, double q_rl, double beta) {
  // Only the difference enters, so shifting both values changes nothing.
  const double x = beta * (q_il - q_rl);
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

bool ibrl_select(double q_il, double q_rl, const IbrlConfig& config, SeededRng& rng) {
  if (config.mode == IbrlMode::greedy) return q_il > q_rl;
  return rng.uniform() < ibrl_il_probability(q_il, q_rl, config.beta);
}

IbrlChoice ibrl_act(const AgentState& agent, const BcPolicy& bc, const Vec& obs, const IbrlConfig& config,
                    SeededRng& rng) {
  IbrlChoice c;
  const Vec a_il = bc_mean(bc, obs);
  const Vec a_rl = act_explore_baseline(agent, obs, rng);
  Mat obs2(obs.size(), 2), act2(a_il.size(), 2);
  obs2 << obs, obs;
  act2 << a_il, a_rl;
  const Vec q = ensemble_q(agent, obs2, act2).colwise().mean().transpose();
  c.q_il = q[0];
  c.q_rl = q[1];
  c.chose_il = ibrl_select(c.q_il, c.q_rl, config, rng);
  c.action = c.chose_il ? a_il : a_rl;
  return c;
}

}  // namespace dgnlab
