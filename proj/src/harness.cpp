#include "dgnlab/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace dgnlab {

namespace {

// Sub-stream tags; every source of randomness in a run gets its own.
constexpr std::uint64_t kInitStream = 0x1001;
constexpr std::uint64_t kActStream = 0x1002;
constexpr std::uint64_t kUpdateStream = 0x1003;
constexpr std::uint64_t kFitStream = 0x1004;
constexpr std::uint64_t kBcStream = 0x1005;
constexpr std::uint64_t kDgnInitStream = 0x1006;
constexpr std::uint64_t kTrainEnvStream = 0x7121;
constexpr std::uint64_t kEvalEnvStream = 0xE7A1;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const std::string s = trim(text);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + s + "'");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + s + "'");
}

std::vector<Index> parse_sizes(std::string_view key, std::string_view text) {
  std::vector<Index> out;
  std::string s = trim(text);
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<Index>(key, item));
  if (out.empty()) throw ConfigError("config key '" + std::string(key) + "': empty layer list");
  for (Index v : out)
    if (v < 1) throw ConfigError("config key '" + std::string(key) + "': layer widths must be positive");
  return out;
}

std::string join_sizes(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct KeyHandler {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T, typename Ref>
KeyHandler number_key(std::string key, Ref ref) {
  return {key, [key, ref](ExperimentConfig& c, std::string_view v) { ref(c) = parse_number<T>(key, v); },
          [ref](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_real(ref(c));
            } else {
              return std::to_string(ref(c));
            }
          }};
}

#define DGN_FIELD(expr) [](auto& c) -> auto& { return expr; }

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> table = [] {
    std::vector<KeyHandler> t;
    t.push_back({"env", [](ExperimentConfig& c, std::string_view v) { c.env = parse_env_name(trim(v)); },
                 [](const ExperimentConfig& c) { return to_string(c.env); }});
    t.push_back({"method", [](ExperimentConfig& c, std::string_view v) { c.method = parse_method(trim(v)); },
                 [](const ExperimentConfig& c) { return to_string(c.method); }});
    t.push_back({"demo_path", [](ExperimentConfig& c, std::string_view v) { c.demo_path = trim(v); },
                 [](const ExperimentConfig& c) { return c.demo_path.string(); }});
    t.push_back(number_key<long>("total_steps", DGN_FIELD(c.total_steps)));
    t.push_back(number_key<long>("eval_interval", DGN_FIELD(c.eval_interval)));
    t.push_back(number_key<int>("eval_episodes", DGN_FIELD(c.eval_episodes)));
    t.push_back(number_key<int>("warmup_episodes", DGN_FIELD(c.warmup_episodes)));
    t.push_back(number_key<std::uint64_t>("seed", DGN_FIELD(c.seed)));
    t.push_back({"output_dir", [](ExperimentConfig& c, std::string_view v) { c.output_dir = trim(v); },
                 [](const ExperimentConfig& c) { return c.output_dir.string(); }});
    t.push_back(number_key<double>("early_stop_success", DGN_FIELD(c.early_stop_success)));
    t.push_back(number_key<long>("checkpoint_interval", DGN_FIELD(c.checkpoint_interval)));
    t.push_back({"kl_reference", [](ExperimentConfig& c, std::string_view v) { c.kl_reference = trim(v); },
                 [](const ExperimentConfig& c) { return c.kl_reference.string(); }});
    t.push_back({"log_wallclock",
                 [](ExperimentConfig& c, std::string_view v) { c.log_wallclock = parse_bool("log_wallclock", v); },
                 [](const ExperimentConfig& c) { return std::string(c.log_wallclock ? "true" : "false"); }});
    t.push_back(number_key<std::size_t>("replay_capacity", DGN_FIELD(c.replay_capacity)));

    t.push_back(number_key<double>("agent.gamma", DGN_FIELD(c.agent.gamma)));
    t.push_back(number_key<double>("agent.polyak", DGN_FIELD(c.agent.polyak)));
    t.push_back(number_key<int>("agent.ensemble_size", DGN_FIELD(c.agent.ensemble_size)));
    t.push_back(number_key<int>("agent.target_subset", DGN_FIELD(c.agent.target_subset)));
    t.push_back(number_key<int>("agent.utd_ratio", DGN_FIELD(c.agent.utd_ratio)));
    t.push_back(number_key<int>("agent.actor_update_interval", DGN_FIELD(c.agent.actor_update_interval)));
    t.push_back(number_key<double>("agent.explore_std", DGN_FIELD(c.agent.explore_std)));
    t.push_back(number_key<double>("agent.learning_rate", DGN_FIELD(c.agent.learning_rate)));
    t.push_back(number_key<double>("agent.weight_decay", DGN_FIELD(c.agent.weight_decay)));
    t.push_back(number_key<int>("agent.batch_size", DGN_FIELD(c.agent.batch_size)));
    t.push_back({"agent.actor_hidden",
                 [](ExperimentConfig& c, std::string_view v) { c.agent.actor_hidden = parse_sizes("agent.actor_hidden", v); },
                 [](const ExperimentConfig& c) { return join_sizes(c.agent.actor_hidden); }});
    t.push_back({"agent.critic_hidden",
                 [](ExperimentConfig& c, std::string_view v) { c.agent.critic_hidden = parse_sizes("agent.critic_hidden", v); },
                 [](const ExperimentConfig& c) { return join_sizes(c.agent.critic_hidden); }});
    t.push_back(number_key<double>("agent.actor_dropout", DGN_FIELD(c.actor_dropout)));

    t.push_back({"dgn.hidden", [](ExperimentConfig& c, std::string_view v) { c.dgn.hidden = parse_sizes("dgn.hidden", v); },
                 [](const ExperimentConfig& c) { return join_sizes(c.dgn.hidden); }});
    t.push_back(number_key<double>("dgn.dropout", DGN_FIELD(c.dgn.dropout_rate)));
    t.push_back(number_key<double>("dgn.learning_rate", DGN_FIELD(c.dgn.learning_rate)));
    t.push_back(number_key<double>("dgn.weight_decay", DGN_FIELD(c.dgn.weight_decay)));
    t.push_back(number_key<double>("dgn.sigma_min", DGN_FIELD(c.dgn.sigma_min)));
    t.push_back(number_key<double>("dgn.initial_std", DGN_FIELD(c.dgn.initial_std)));
    t.push_back(number_key<int>("dgn.update_interval", DGN_FIELD(c.dgn.update_interval)));
    t.push_back(number_key<int>("dgn.epochs", DGN_FIELD(c.dgn.epochs_per_update)));
    t.push_back(number_key<int>("dgn.fit_batch", DGN_FIELD(c.dgn.fit_batch_size)));
    t.push_back({"dgn.schedule", [](ExperimentConfig& c, std::string_view v) { c.dgn.schedule = parse_noise_schedule(trim(v)); },
                 [](const ExperimentConfig& c) { return to_string(c.dgn.schedule); }});
    t.push_back(number_key<double>("dgn.anneal_tau", DGN_FIELD(c.dgn.anneal_tau)));
    t.push_back(number_key<int>("dgn.shutoff_window", DGN_FIELD(c.dgn.shutoff_window)));
    t.push_back(number_key<double>("dgn.shutoff_threshold", DGN_FIELD(c.dgn.shutoff_threshold)));

    t.push_back({"bc.hidden", [](ExperimentConfig& c, std::string_view v) { c.bc.hidden = parse_sizes("bc.hidden", v); },
                 [](const ExperimentConfig& c) { return join_sizes(c.bc.hidden); }});
    t.push_back(number_key<int>("bc.epochs", DGN_FIELD(c.bc.epochs)));
    t.push_back(number_key<double>("bc.learning_rate", DGN_FIELD(c.bc.learning_rate)));
    t.push_back(number_key<int>("bc.batch_size", DGN_FIELD(c.bc.batch_size)));
    t.push_back(number_key<long>("bc.max_steps", DGN_FIELD(c.bc.max_steps)));

    t.push_back(number_key<double>("rft.lambda", DGN_FIELD(c.rft.bc_weight)));
    t.push_back(number_key<int>("rft.pretrain_epochs", DGN_FIELD(c.rft.pretrain_epochs)));
    t.push_back(number_key<double>("ibrl.beta", DGN_FIELD(c.ibrl.beta)));
    t.push_back({"ibrl.mode", [](ExperimentConfig& c, std::string_view v) { c.ibrl.mode = parse_ibrl_mode(trim(v)); },
                 [](const ExperimentConfig& c) { return to_string(c.ibrl.mode); }});
    return t;
  }();
  return table;
}

#undef DGN_FIELD

Mat demo_obs_matrix(const DemoDataset& d) {
  const auto flat = d.flat();
  Mat obs(d.obs_dim, static_cast<Index>(flat.size()));
  for (std::size_t j = 0; j < flat.size(); ++j) obs.col(static_cast<Index>(j)) = flat[j].obs;
  return obs;
}

std::string opt_real(const std::optional<double>& v) {
  if (!v) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

}  // namespace

// --- methods ---------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::dgn: return "dgn";
    case Method::dgn_residual: return "dgn_residual";
    case Method::dgn_global: return "dgn_global";
    case Method::rlpd: return "rlpd";
    case Method::rft: return "rft";
    case Method::ibrl: return "ibrl";
  }
  return "?";
}

Method parse_method(std::string_view tag) {
  for (Method m : {Method::dgn, Method::dgn_residual, Method::dgn_global, Method::rlpd, Method::rft, Method::ibrl})
    if (tag == to_string(m)) return m;
  throw ConfigError("unknown method '" + std::string(tag) + "'");
}

bool is_dgn(Method m) { return m == Method::dgn || m == Method::dgn_residual || m == Method::dgn_global; }

DgnVariant dgn_variant_for(Method m) {
  switch (m) {
    case Method::dgn: return DgnVariant::zero_mean;
    case Method::dgn_residual: return DgnVariant::residual;
    case Method::dgn_global: return DgnVariant::global_ablation;
    default: throw ContractError("dgn_variant_for: '" + to_string(m) + "' is not a DGN method");
  }
}

// --- config ----------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (warmup_episodes < -1) throw ConfigError("warmup_episodes must be >= 0 (or -1 for the env default)");
  if (early_stop_success < 0.0 || early_stop_success > 1.0) throw ConfigError("early_stop_success must be in [0, 1]");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
  if (replay_capacity < 1) throw ConfigError("replay_capacity must be >= 1");
  if (actor_dropout != -1.0 && (actor_dropout < 0.0 || actor_dropout >= 1.0))
    throw ConfigError("agent.actor_dropout must be in [0, 1) or -1");
  if (rft.bc_weight < 0.0) throw ConfigError("rft.lambda must be >= 0");
  if (rft.pretrain_epochs < 0) throw ConfigError("rft.pretrain_epochs must be >= 0");
  if (!(ibrl.beta > 0.0)) throw ConfigError("ibrl.beta must be > 0");
  if (bc.epochs < 0 || bc.batch_size < 1 || bc.max_steps < 0 || !(bc.learning_rate > 0.0))
    throw ConfigError("bad bc.* settings");
  try {
    agent.validate();
    if (is_dgn(method)) {
      DgnConfig d = dgn;
      d.variant = dgn_variant_for(method);
      d.validate();
    }
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

int default_warmup_episodes(EnvName env) {
  switch (env) {
    case EnvName::point_maze: return 5;
    case EnvName::reacher_sparse: return 10;
    case EnvName::pusher_toy: return 20;
  }
  return 5;
}

int resolved_warmup(const ExperimentConfig& c) {
  return c.warmup_episodes >= 0 ? c.warmup_episodes : default_warmup_episodes(c.env);
}

double resolved_actor_dropout(const ExperimentConfig& c) {
  if (c.actor_dropout >= 0.0) return c.actor_dropout;
  return c.method == Method::ibrl ? 0.5 : 0.0;
}

void set_config_value(ExperimentConfig& c, std::string_view key, std::string_view value) {
  const std::string k = trim(key);
  for (const auto& h : handlers())
    if (h.key == k) {
      h.set(c, value);
      return;
    }
  throw ConfigError("unknown config key '" + k + "'");
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& h : handlers()) out.emplace_back(h.key, h.get(c));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& h : handlers()) out.push_back(h.key);
  return out;
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value'");
    try {
      set_config_value(base, body.substr(0, eq), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& c) {
  for (const auto& [k, v] : config_entries(c)) out << k << " = " << v << '\n';
}

// --- metrics ---------------------------------------------------------------

std::string format_metrics_row(const MetricsRow& r) {
  std::string out = std::to_string(r.step);
  for (const auto& v : {std::optional<double>(r.success), std::optional<double>(r.mean_return),
                        std::optional<double>(r.mean_length), std::optional<double>(r.noise_scale), r.dgn_nll, r.kl,
                        r.wall_s})
    out += "," + opt_real(v);
  return out;
}

std::vector<MetricsRow> read_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMetricsHeader) throw ParseError(1, "unexpected metrics header");
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) throw ParseError(line_no, "expected 8 columns, got " + std::to_string(cells.size()));
    auto num = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw ParseError(line_no, "bad number '" + s + "'");
      }
    };
    auto opt = [&](const std::string& s) { return s.empty() ? std::optional<double>() : std::optional<double>(num(s)); };
    MetricsRow r;
    r.step = static_cast<long>(num(cells[0]));
    r.success = num(cells[1]);
    r.mean_return = num(cells[2]);
    r.mean_length = num(cells[3]);
    r.noise_scale = num(cells[4]);
    r.dgn_nll = opt(cells[5]);
    r.kl = opt(cells[6]);
    r.wall_s = opt(cells[7]);
    if (!rows.empty() && r.step <= rows.back().step) throw ParseError(line_no, "steps must be strictly increasing");
    rows.push_back(r);
  }
  return rows;
}

std::vector<MetricsRow> load_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
  return read_metrics(in);
}

// --- evaluation ------------------------------------------------------------

std::uint64_t eval_episode_seed(std::uint64_t run_seed, long episode) {
  return derive_seed(run_seed, kEvalEnvStream, static_cast<std::uint64_t>(episode));
}

std::uint64_t train_episode_seed(std::uint64_t run_seed, long episode) {
  return derive_seed(run_seed, kTrainEnvStream, static_cast<std::uint64_t>(episode));
}

EvalResult evaluate(const EnvSpec& spec, const PolicyFn& policy, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ContractError("evaluate: episodes must be >= 1");
  double successes = 0.0, returns = 0.0, lengths = 0.0;
  for (int e = 0; e < episodes; ++e) {
    ResetResult r = reset(spec, eval_episode_seed(seed, e));
    EnvState state = std::move(r.state);
    Vec obs = std::move(r.obs);
    Transition last;
    double ret = 0.0;
    while (!state.done) {
      StepResult s = step(spec, state, policy(obs, state));
      ret += s.transition.reward;
      obs = s.transition.next_obs;
      last = std::move(s.transition);
      state = std::move(s.state);
    }
    successes += last.success ? 1.0 : 0.0;
    returns += ret;
    lengths += state.step_index;
  }
  const double n = episodes;
  return {successes / n, returns / n, lengths / n};
}

PolicyFn greedy_policy(const AgentState& agent, const BcPolicy* ibrl_bc) {
  if (!ibrl_bc) return [&agent](const Vec& obs, const EnvState&) { return act_eval(agent, obs); };
  return [&agent, ibrl_bc](const Vec& obs, const EnvState&) {
    const Vec a_il = bc_mean(*ibrl_bc, obs);
    const Vec a_rl = act_eval(agent, obs);
    Mat obs2(obs.size(), 2), act2(a_il.size(), 2);
    obs2 << obs, obs;
    act2 << a_il, a_rl;
    const Vec q = ensemble_q(agent, obs2, act2).colwise().mean().transpose();
    return Vec(q[0] > q[1] ? a_il : a_rl);
  };
}

// --- KL --------------------------------------------------------------------

double gaussian_kl(const Vec& mu1, const Mat& s1, const Vec& mu2, const Mat& s2) {
  const Index d = mu1.size();
  require_shape(mu2.size() == d && s1.rows() == d && s1.cols() == d && s2.rows() == d && s2.cols() == d,
                "gaussian_kl: dimension mismatch");
  const Eigen::LLT<Mat> l1(s1), l2(s2);
  if (l1.info() != Eigen::Success || l2.info() != Eigen::Success)
    throw NumericError("gaussian_kl: covariance is not positive definite");
  const Vec diff = mu2 - mu1;
  const double trace = l2.solve(s1).trace();
  const double quad = diff.dot(l2.solve(diff));
  const double logdet1 = 2.0 * Mat(l1.matrixL()).diagonal().array().log().sum();
  const double logdet2 = 2.0 * Mat(l2.matrixL()).diagonal().array().log().sum();
  return 0.5 * (trace + quad - static_cast<double>(d) + logdet2 - logdet1);
}

ActionGaussian method_gaussian(const PolicySnapshot& snap, const Vec& obs) {
  const AgentState& agent = snap.agent;
  ActionGaussian g;
  if (is_dgn(snap.method)) {
    if (!snap.sampling) throw ContractError("method_gaussian: DGN snapshot without a sampling policy");
    g.mean = act_eval(agent, obs);
    if (snap.sampling->residual) g.mean += mlp_eval(snap.sampling->residual->net, obs);
    g.cov = covariance(*snap.sampling, obs);
    return g;
  }
  const double var = agent.config.explore_std * agent.config.explore_std;
  g.cov = var * Mat::Identity(agent.act_dim, agent.act_dim);
  if (snap.method == Method::ibrl) {
    if (!snap.ibrl_bc) throw ContractError("method_gaussian: IBRL snapshot without its BC policy");
    const EnvState unused{EnvName::point_maze, Vec(), 0, false, SeededRng(0)};
    g.mean = greedy_policy(agent, &*snap.ibrl_bc)(obs, unused);
  } else {
    g.mean = act_eval(agent, obs);
  }
  return g;
}

double kl_to_bc(const PolicySnapshot& snap, const BcPolicy& bc, const Mat& demo_obs) {
  if (demo_obs.cols() == 0) throw ContractError("kl_to_bc: no demo states");
  require_shape(demo_obs.rows() == snap.agent.obs_dim && bc.mean_net.input_dim() == snap.agent.obs_dim &&
                    bc.mean_net.output_dim() == snap.agent.act_dim,
                "kl_to_bc: BC policy and run dimensions differ");
  const Vec bc_var = bc_std(bc).array().square();
  const Mat bc_cov = bc_var.asDiagonal();
  const Mat bc_means = bc_mean(bc, demo_obs);
  double total = 0.0;
  for (Index j = 0; j < demo_obs.cols(); ++j) {
    const ActionGaussian g = method_gaussian(snap, demo_obs.col(j));
    total += gaussian_kl(g.mean, g.cov, bc_means.col(j), bc_cov);
  }
  return total / static_cast<double>(demo_obs.cols());
}

PolicySnapshot snapshot_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("method")) throw ContractError("checkpoint has no method tag");
  PolicySnapshot snap;
  snap.method = parse_method(ckpt.meta["method"].get<std::string>());
  snap.agent = get_agent(ckpt);
  if (has_sampling_policy(ckpt)) snap.sampling = get_sampling_policy(ckpt);
  if (has_bc(ckpt, "ibrl_bc")) snap.ibrl_bc = get_bc(ckpt, "ibrl_bc");
  return snap;
}

std::vector<KlPoint> kl_analysis(const std::filesystem::path& run_dir, const BcPolicy& bc, const DemoDataset& demos) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(run_dir)) throw std::runtime_error("run directory not found: " + run_dir.string());
  const Mat obs = demo_obs_matrix(demos);
  std::vector<KlPoint> points;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() != ".ckpt") continue;
    if (name.rfind("ckpt_", 0) != 0 && name != "final.ckpt") continue;
    const Checkpoint ckpt = load_checkpoint(entry.path());
    const PolicySnapshot snap = snapshot_from_checkpoint(ckpt);
    const long step = snap.agent.env_step;
    if (std::ranges::any_of(points, [&](const KlPoint& p) { return p.step == step; })) continue;
    points.push_back({step, kl_to_bc(snap, bc, obs)});
  }
  if (points.empty()) throw std::runtime_error("no checkpoints in " + run_dir.string());
  std::ranges::sort(points, {}, &KlPoint::step);
  return points;
}

// --- training --------------------------------------------------------------

std::optional<long> steps_to_success(const std::vector<MetricsRow>& rows, double level) {
  for (const auto& r : rows)
    if (r.success >= level) return r.step;
  return std::nullopt;
}

namespace {

Checkpoint run_checkpoint(const ExperimentConfig& cfg, const AgentState& agent, const SamplingPolicy* sampling,
                          const BcPolicy* ibrl_bc) {
  Checkpoint ckpt;
  ckpt.meta["method"] = to_string(cfg.method);
  ckpt.meta["env"] = to_string(cfg.env);
  ckpt.meta["seed"] = cfg.seed;
  put_agent(ckpt, agent);
  if (sampling) put_sampling_policy(ckpt, *sampling);
  if (ibrl_bc) put_bc(ckpt, *ibrl_bc, "ibrl_bc");
  return ckpt;
}

}  // namespace

TrainResult train(const ExperimentConfig& config, const TrainHooks& hooks) {
  namespace fs = std::filesystem;
  config.validate();
  const EnvSpec spec = make_env_spec(config.env);
  if (!fs::exists(config.demo_path)) throw ConfigError("demo file not found: " + config.demo_path.string());
  const DemoDataset dataset = load_demos(config.demo_path);
  if (dataset.env_name != to_string(config.env) || dataset.obs_dim != spec.obs_dim || dataset.act_dim != spec.act_dim)
    throw ConfigError("demo file " + config.demo_path.string() + " was recorded for '" + dataset.env_name +
                      "', not '" + to_string(config.env) + "'");
  const DemoStore demos(dataset);

  std::optional<BcPolicy> kl_bc;
  Mat kl_obs;
  if (!config.kl_reference.empty()) {
    if (!fs::exists(config.kl_reference))
      throw ConfigError("kl_reference not found: " + config.kl_reference.string());
    kl_bc = get_bc(load_checkpoint(config.kl_reference));
    kl_obs = demo_obs_matrix(dataset);
  }

  fs::create_directories(config.output_dir);
  {
    std::ofstream cfg_out(config.output_dir / "config.txt");
    write_config(cfg_out, config);
  }

  const std::uint64_t seed = config.seed;
  SeededRng init_rng(derive_seed(seed, kInitStream));
  SeededRng act_rng(derive_seed(seed, kActStream));
  SeededRng update_rng(derive_seed(seed, kUpdateStream));
  SeededRng fit_rng(derive_seed(seed, kFitStream));
  SeededRng bc_rng(derive_seed(seed, kBcStream));
  SeededRng dgn_init_rng(derive_seed(seed, kDgnInitStream));

  AgentConfig agent_cfg = config.agent;
  agent_cfg.actor_dropout_rate = resolved_actor_dropout(config);
  AgentState agent = make_agent(spec.obs_dim, spec.act_dim, agent_cfg, init_rng);

  std::optional<SamplingPolicy> sampling;
  if (is_dgn(config.method)) {
    DgnConfig d = config.dgn;
    d.variant = dgn_variant_for(config.method);
    sampling = make_sampling_policy(spec.obs_dim, spec.act_dim, d, dgn_init_rng);
  }
  std::optional<BcPolicy> ibrl_bc;
  if (config.method == Method::ibrl) ibrl_bc = bc_train(demos, spec.obs_dim, spec.act_dim, config.bc, bc_rng);
  const double rft_lambda = config.method == Method::rft ? config.rft.bc_weight : 0.0;
  if (rft_lambda > 0.0) rft_pretrain_actor(agent, demos, config.rft.pretrain_epochs, bc_rng);

  ReplayBuffer online(config.replay_capacity, spec.obs_dim, spec.act_dim);
  const int warmup = resolved_warmup(config);
  const auto batch = static_cast<std::size_t>(agent_cfg.batch_size);
  const auto start_time = std::chrono::steady_clock::now();

  TrainResult result;
  result.metrics_path = config.output_dir / "metrics.csv";
  std::ofstream csv(result.metrics_path);
  if (!csv) throw std::runtime_error("cannot write " + result.metrics_path.string());
  csv << kMetricsHeader << '\n';

  std::optional<double> last_nll;
  const BcPolicy* ibrl_bc_ptr = ibrl_bc ? &*ibrl_bc : nullptr;

  auto emit_row = [&](long t) {
    MetricsRow row;
    row.step = t;
    const EvalResult ev = evaluate(spec, greedy_policy(agent, ibrl_bc_ptr), config.eval_episodes, seed);
    row.success = ev.success_rate;
    row.mean_return = ev.mean_return;
    row.mean_length = ev.mean_length;
    row.noise_scale = sampling ? noise_scale(*sampling, t) : 1.0;
    row.dgn_nll = last_nll;
    if (kl_bc) {
      PolicySnapshot snap{config.method, agent, sampling, ibrl_bc};
      row.kl = kl_to_bc(snap, *kl_bc, kl_obs);
    }
    if (config.log_wallclock)
      row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    csv << format_metrics_row(row) << '\n' << std::flush;
    result.rows.push_back(row);
    ++result.eval_rows;
    return row;
  };

  auto save = [&](const fs::path& path) {
    save_checkpoint(run_checkpoint(config, agent, sampling ? &*sampling : nullptr, ibrl_bc_ptr), path);
  };

  emit_row(0);

  long episode = 0;
  double episode_return = 0.0;
  ResetResult rr = reset(spec, train_episode_seed(seed, episode));
  EnvState state = std::move(rr.state);
  Vec obs = std::move(rr.obs);

  for (long t = 0; t < config.total_steps; ++t) {
    try {
      Vec action;
      if (sampling) {
        action = sample(*sampling, agent.actor, obs, t, act_rng);
      } else if (ibrl_bc) {
        action = ibrl_act(agent, *ibrl_bc, obs, config.ibrl, act_rng).action;
      } else {
        action = act_explore_baseline(agent, obs, act_rng);
      }
      StepResult sr = step(spec, state, action);
      if (hooks.on_step) hooks.on_step(t, obs, sr.transition.action);
      online.push(sr.transition);
      episode_return += sr.transition.reward;
      state = std::move(sr.state);
      obs = sr.transition.next_obs;
      agent.env_step = t + 1;

      if (episode >= warmup) {
        for (int u = 0; u < agent_cfg.utd_ratio; ++u) {
          const Batch b = sample_symmetric(online, demos, batch, update_rng);
          critic_update(agent, b, update_rng);
          target_update(agent);
          if (agent.critic_updates % agent_cfg.actor_update_interval == 0) {
            if (rft_lambda > 0.0) {
              rft_actor_update(agent, b, sample_demos(demos, batch, update_rng), rft_lambda, update_rng);
            } else {
              actor_update(agent, b, update_rng);
            }
          }
        }
      }

      if (sampling && agent.env_step % sampling->update_interval == 0) {
        last_nll = fit(*sampling, agent.actor, demos, fit_rng).mean_loss;
      }

      if (state.done) {
        if (sampling) record_episode(*sampling, sr.transition.success);
        if (hooks.on_episode) hooks.on_episode(episode, t + 1, {sr.transition.success, episode_return, state.step_index});
        episode_return = 0.0;
        ++episode;
        rr = reset(spec, train_episode_seed(seed, episode));
        state = std::move(rr.state);
        obs = std::move(rr.obs);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("training failed at env_step " + std::to_string(t) + ": " + e.what());
    }

    const long done_steps = t + 1;
    if (config.checkpoint_interval > 0 && done_steps % config.checkpoint_interval == 0)
      save(config.output_dir / ("ckpt_" + std::to_string(done_steps) + ".ckpt"));
    if (done_steps % config.eval_interval == 0) {
      const MetricsRow row = emit_row(done_steps);
      if (config.early_stop_success > 0.0 && row.success >= config.early_stop_success) {
        result.stopped_early = true;
        break;
      }
    }
  }

  result.env_steps = agent.env_step;
  result.episodes = episode;
  result.critic_updates = agent.critic_updates;
  result.actor_updates = agent.actor_updates;
  result.fit_calls = sampling ? sampling->fit_calls : 0;
  result.final_checkpoint = config.output_dir / "final.ckpt";
  save(result.final_checkpoint);
  return result;
}

}  // namespace dgnlab
