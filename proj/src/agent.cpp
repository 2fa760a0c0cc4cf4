#include "dgnlab/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dgnlab {

namespace {

std::vector<Index> layer_sizes(Index in, const std::vector<Index>& hidden, Index out) {
  std::vector<Index> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

AdamWConfig optimizer_config(const AgentConfig& c) {
  AdamWConfig a;
  a.learning_rate = c.learning_rate;
  a.weight_decay = c.weight_decay;
  return a;
}

}  // namespace

void AgentConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("agent: gamma must lie in [0, 1)");
  if (!(polyak >= 0.0 && polyak <= 1.0)) throw ConfigError("agent: polyak must lie in [0, 1]");
  if (ensemble_size < 1) throw ConfigError("agent: ensemble_size must be >= 1");
  if (target_subset < 1 || target_subset > ensemble_size)
    throw ConfigError("agent: target_subset must lie in [1, ensemble_size]");
  if (utd_ratio < 1) throw ConfigError("agent: utd_ratio must be >= 1");
  if (actor_update_interval < 1) throw ConfigError("agent: actor_update_interval must be >= 1");
  if (explore_std < 0.0) throw ConfigError("agent: explore_std must be >= 0");
  if (batch_size < 2 || batch_size % 2) throw ConfigError("agent: batch_size must be even and >= 2");
  if (!(actor_dropout_rate >= 0.0 && actor_dropout_rate < 1.0))
    throw ConfigError("agent: actor_dropout_rate must lie in [0, 1)");
}

AgentState make_agent(Index obs_dim, Index act_dim, const AgentConfig& config, SeededRng& rng) {
  config.validate();
  AgentState a;
  a.config = config;
  a.obs_dim = obs_dim;
  a.act_dim = act_dim;
  a.actor = mlp_init<Scalar>(layer_sizes(obs_dim, config.actor_hidden, act_dim), config.actor_dropout_rate, rng);
  for (int i = 0; i < config.ensemble_size; ++i)
    a.critics.push_back(mlp_init<Scalar>(layer_sizes(obs_dim + act_dim, config.critic_hidden, 1), 0.0, rng));
  a.target_critics = a.critics;
  a.actor_opt = adamw_init(a.actor, optimizer_config(config));
  for (const Net& c : a.critics) a.critic_opts.push_back(adamw_init(c, optimizer_config(config)));
  return a;
}

Mat actor_mean(const Net& actor, const Mat& obs) { return mlp_eval(actor, obs).array().tanh().matrix(); }

Vec actor_mean(const Net& actor, const Vec& obs) { return actor_mean(actor, Mat(obs)).col(0); }

Mat act_eval(const AgentState& agent, const Mat& obs) { return actor_mean(agent.actor, obs); }

Vec act_eval(const AgentState& agent, const Vec& obs) { return act_eval(agent, Mat(obs)).col(0); }

Vec act_explore_baseline(const AgentState& agent, const Vec& obs, SeededRng& rng) {
  Vec a = act_eval(agent, obs);
  if (agent.config.explore_std > 0.0) a += agent.config.explore_std * gaussian_draw(rng, agent.act_dim);
  return a.cwiseMax(-1.0).cwiseMin(1.0);
}

Mat critic_input(const Mat& obs, const Mat& act) {
  require_shape(obs.cols() == act.cols(), "critic_input: batch sizes differ");
  Mat sa(obs.rows() + act.rows(), obs.cols());
  sa.topRows(obs.rows()) = obs;
  sa.bottomRows(act.rows()) = act;
  return sa;
}

Mat ensemble_q(const AgentState& agent, const Mat& obs, const Mat& act) {
  const Mat sa = critic_input(obs, act);
  Mat q(static_cast<Index>(agent.critics.size()), sa.cols());
  for (std::size_t i = 0; i < agent.critics.size(); ++i) q.row(static_cast<Index>(i)) = mlp_eval(agent.critics[i], sa);
  return q;
}

Vec td_targets(const AgentState& agent, const Batch& batch, SeededRng& rng) {
  const auto& c = agent.config;
  std::vector<std::size_t> idx(agent.target_critics.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates picks target_subset distinct critics.
  for (std::size_t k = 0; k < static_cast<std::size_t>(c.target_subset); ++k)
    std::swap(idx[k], idx[k + rng.below(idx.size() - k)]);

  const Mat sa_next = critic_input(batch.next_obs, act_eval(agent, batch.next_obs));
  Vec min_q = Vec::Constant(batch.size(), std::numeric_limits<Scalar>::infinity());
  for (int k = 0; k < c.target_subset; ++k)
    min_q = min_q.cwiseMin(Vec(mlp_eval(agent.target_critics[idx[static_cast<std::size_t>(k)]], sa_next).row(0).transpose()));
  return batch.reward + c.gamma * (Vec::Ones(batch.size()) - batch.done).cwiseProduct(min_q);
}

CriticLoss critic_regression(const Net& critic, const Mat& sa, const Vec& targets, Mode mode, SeededRng& rng) {
  require_shape(targets.size() == sa.cols(), "critic_regression: one target per column expected");
  MlpCache<Scalar> cache;
  const Mat q = mlp_forward(critic, sa, mode, rng, &cache);
  const Mat residual = q - targets.transpose();
  const double n = static_cast<double>(sa.cols());
  CriticLoss out;
  out.loss = residual.squaredNorm() / n;
  if (!std::isfinite(out.loss)) throw NumericError("critic_update: non-finite TD loss");
  out.grad = mlp_backward(critic, cache, Mat((2.0 / n) * residual));
  return out;
}

double critic_update(AgentState& agent, const Batch& batch, SeededRng& rng) {
  const Vec y = td_targets(agent, batch, rng);
  const Mat sa = critic_input(batch.obs, batch.action);
  double total = 0.0;
  for (std::size_t i = 0; i < agent.critics.size(); ++i) {
    const CriticLoss l = critic_regression(agent.critics[i], sa, y, Mode::train, rng);
    total += l.loss;
    adamw_step(agent.critics[i], l.grad, agent.critic_opts[i]);
  }
  ++agent.critic_updates;
  return total / static_cast<double>(agent.critics.size());
}

NetGrad actor_ascent_grad(const Net& actor, const Mat& obs, const ActionGradFn& dq_da, Mode mode,
                          SeededRng& rng) {
  MlpCache<Scalar> cache;
  const Mat pre = mlp_forward(actor, obs, mode, rng, &cache);
  const Mat act = pre.array().tanh().matrix();
  const Mat gq = dq_da(obs, act);
  require_shape(gq.rows() == act.rows() && gq.cols() == act.cols(), "actor_ascent_grad: bad dQ/da shape");
  const double n = static_cast<double>(obs.cols());
  // d(-mean Q)/d(pre) = -(dQ/da) * (1 - a^2) / n
  const Mat grad_pre = (-(1.0 / n) * gq.array() * (1.0 - act.array().square())).matrix();
  return mlp_backward(actor, cache, grad_pre);
}

Mat ensemble_action_grad(const AgentState& agent, const Mat& obs, const Mat& actions) {
  const Mat sa = critic_input(obs, actions);
  const double e = static_cast<double>(agent.critics.size());
  const Mat ones = Mat::Constant(1, sa.cols(), 1.0 / e);
  Mat g = Mat::Zero(actions.rows(), actions.cols());
  SeededRng unused(0);
  for (const Net& critic : agent.critics) {
    MlpCache<Scalar> cache;
    mlp_forward(critic, sa, Mode::eval, unused, &cache);
    Mat input_grad;
    mlp_backward(critic, cache, ones, &input_grad);
    g += input_grad.bottomRows(actions.rows());
  }
  return g;
}

double actor_loss(const AgentState& agent, const Mat& obs) {
  return -ensemble_q(agent, obs, act_eval(agent, obs)).mean();
}

void actor_update(AgentState& agent, const Batch& batch, SeededRng& rng) {
  const NetGrad g = actor_ascent_grad(
      agent.actor, batch.obs,
      [&agent](const Mat& obs, const Mat& actions) { return ensemble_action_grad(agent, obs, actions); },
      Mode::train, rng);
  adamw_step(agent.actor, g, agent.actor_opt);
  ++agent.actor_updates;
}

void target_update(AgentState& agent) {
  for (std::size_t i = 0; i < agent.critics.size(); ++i)
    polyak_blend(agent.target_critics[i], agent.critics[i], agent.config.polyak);
}

}  // namespace dgnlab
