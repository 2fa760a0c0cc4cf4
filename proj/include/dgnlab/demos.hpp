#pragma once

#include "dgnlab/envs.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace dgnlab {

struct ModeWeight {
  ExpertMode mode;
  double weight;
};

struct DemoMeta {
  std::vector<ModeWeight> mode_mix;
  double expert_noise_std = 0.0;
  std::uint64_t seed = 0;
  std::vector<ExpertMode> traj_modes;  // one per stored trajectory
};

/// Successful expert trajectories for one environment.
struct DemoDataset {
  std::string env_name;
  Index obs_dim = 0;
  Index act_dim = 0;
  DemoMeta meta;
  std::vector<std::vector<Transition>> trajectories;

  std::size_t num_transitions() const;
  /// All transitions in trajectory order.
  std::vector<Transition> flat() const;
};

/// Rolls out the scripted expert with clipped Gaussian action noise and keeps
/// only successful episodes. Throws std::runtime_error after 100 * num_traj
/// attempts without collecting enough.
DemoDataset generate_demos(const EnvSpec& spec, std::size_t num_traj, double expert_noise_std,
                           const std::vector<ModeWeight>& mode_mix, std::uint64_t seed);

// Line-delimited format: a header object, then one object per transition with
// keys obs, action, reward, next_obs, done, success, traj_id, step in that order.
// Reals are written with 17 significant digits.

void write_demos(std::ostream& out, const DemoDataset& d);
/// Throws ParseError naming the offending line.
DemoDataset read_demos(std::istream& in);

void save_demos(const DemoDataset& d, const std::filesystem::path& path);
DemoDataset load_demos(const std::filesystem::path& path);

/// Validates the success-only and chaining invariants; throws ContractError.
void validate_demos(const DemoDataset& d);

/// "%.17g" formatting shared with the checkpoint format; -0 keeps its sign.
std::string format_real(double v);

}  // namespace dgnlab
