#pragma once

#include "dgnlab/agent.hpp"
#include "dgnlab/baselines.hpp"
#include "dgnlab/checkpoint.hpp"
#include "dgnlab/demos.hpp"
#include "dgnlab/dgn.hpp"
#include "dgnlab/envs.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dgnlab {

enum class Method { dgn, dgn_residual, dgn_global, rlpd, rft, ibrl };
std::string to_string(Method m);
Method parse_method(std::string_view tag);
bool is_dgn(Method m);
/// The sampling-policy variant a DGN method tag implies.
DgnVariant dgn_variant_for(Method m);

/// Everything a run needs. Serialized as flat `key = value` lines; see
/// config_keys() for the full list.
struct ExperimentConfig {
  EnvName env = EnvName::point_maze;
  Method method = Method::dgn;
  std::filesystem::path demo_path;
  long total_steps = 50000;
  long eval_interval = 1000;
  int eval_episodes = 50;
  int warmup_episodes = -1;  // -1: per-env default
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  /// Stop after an eval row with success >= this value; 0 disables.
  double early_stop_success = 0.0;
  /// Write a checkpoint every this many env steps (0: final only).
  long checkpoint_interval = 0;
  /// Optional BC checkpoint; when set, each row carries KL(policy || BC).
  std::filesystem::path kl_reference;
  bool log_wallclock = false;
  std::size_t replay_capacity = 200000;

  AgentConfig agent;
  double actor_dropout = -1.0;  // -1: 0.5 for ibrl, else 0
  DgnConfig dgn;
  BcConfig bc;
  RftConfig rft;
  IbrlConfig ibrl;

  /// Method/variant consistency and value ranges. Does not touch the filesystem.
  void validate() const;
};

int default_warmup_episodes(EnvName env);
/// warmup_episodes with the per-env default filled in.
int resolved_warmup(const ExperimentConfig& c);
double resolved_actor_dropout(const ExperimentConfig& c);

/// Sets one key; throws ConfigError for unknown keys or bad values.
void set_config_value(ExperimentConfig& c, std::string_view key, std::string_view value);
/// Every key with its current value, in a stable order.
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c);
std::vector<std::string> config_keys();

/// Parses `key = value` lines; '#' starts a comment. Starts from `base`.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const ExperimentConfig& c);

// --- metrics ---------------------------------------------------------------

struct MetricsRow {
  long step = 0;
  double success = 0.0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  double noise_scale = 1.0;
  std::optional<double> dgn_nll;
  std::optional<double> kl;
  std::optional<double> wall_s;
};

inline constexpr std::string_view kMetricsHeader = "step,success,return,ep_len,noise_scale,dgn_nll,kl,wall_s";

std::string format_metrics_row(const MetricsRow& row);
/// Throws ParseError on a bad header, malformed row or non-increasing step.
std::vector<MetricsRow> read_metrics(std::istream& in);
std::vector<MetricsRow> load_metrics(const std::filesystem::path& path);

// --- evaluation ------------------------------------------------------------

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_length = 0.0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

using PolicyFn = std::function<Vec(const Vec& obs, const EnvState& state)>;

/// Seed of evaluation episode i; disjoint from training-episode seeds.
std::uint64_t eval_episode_seed(std::uint64_t run_seed, long episode);
std::uint64_t train_episode_seed(std::uint64_t run_seed, long episode);

/// Rolls out `episodes` episodes with the deterministic policy.
EvalResult evaluate(const EnvSpec& spec, const PolicyFn& policy, int episodes, std::uint64_t seed);

/// The method's deterministic policy: the actor mean, or for IBRL the greedy
/// choice between the BC mean and the actor mean.
PolicyFn greedy_policy(const AgentState& agent, const BcPolicy* ibrl_bc);

// --- KL to behavior cloning ------------------------------------------------

/// KL(N(mu1, s1) || N(mu2, s2)) in closed form.
double gaussian_kl(const Vec& mu1, const Mat& s1, const Vec& mu2, const Mat& s2);

/// The action distribution a method uses at obs, as a Gaussian.
struct ActionGaussian {
  Vec mean;
  Mat cov;
};

struct PolicySnapshot {
  Method method = Method::rlpd;
  AgentState agent;
  std::optional<SamplingPolicy> sampling;
  std::optional<BcPolicy> ibrl_bc;
};

ActionGaussian method_gaussian(const PolicySnapshot& snap, const Vec& obs);

/// Mean over the demo states of KL(method || BC).
double kl_to_bc(const PolicySnapshot& snap, const BcPolicy& bc, const Mat& demo_obs);

PolicySnapshot snapshot_from_checkpoint(const Checkpoint& ckpt);

struct KlPoint {
  long step = 0;
  double kl = 0.0;
};

/// KL over every checkpoint in a run directory, ordered by step.
std::vector<KlPoint> kl_analysis(const std::filesystem::path& run_dir, const BcPolicy& bc, const DemoDataset& demos);

// --- training --------------------------------------------------------------

struct TrainHooks {
  /// Called after each env step with the pre-step observation and the action taken.
  std::function<void(long step, const Vec& obs, const Vec& action)> on_step;
  /// Called when a training episode ends.
  std::function<void(long episode, long step, const EpisodeResult& result)> on_episode;
};

struct TrainResult {
  long env_steps = 0;
  long episodes = 0;
  long critic_updates = 0;
  long actor_updates = 0;
  long fit_calls = 0;
  long eval_rows = 0;
  bool stopped_early = false;
  std::vector<MetricsRow> rows;
  std::filesystem::path metrics_path;
  std::filesystem::path final_checkpoint;
};

/// Runs the whole experiment and writes metrics.csv, config.txt and
/// checkpoints into config.output_dir.
TrainResult train(const ExperimentConfig& config, const TrainHooks& hooks = {});

/// First step whose success reaches `level`, if any.
std::optional<long> steps_to_success(const std::vector<MetricsRow>& rows, double level);

}  // namespace dgnlab
