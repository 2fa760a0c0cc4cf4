#pragma once

#include "dgnlab/agent.hpp"
#include "dgnlab/baselines.hpp"
#include "dgnlab/dgn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace dgnlab {

/// Named tensors plus a JSON metadata object.
///
/// On disk: line 1 is a header object {"format":"dgnlab-ckpt","version":1,
/// "meta":{...},"manifest":[{"name":..,"shape":[rows,cols]},...]}; each following
/// line is {"name":..,"shape":[rows,cols],"data":[...]} with data in row-major
/// order, every real written with 17 significant digits.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat>> tensors;

  void put(const std::string& name, Mat value);
  bool has(const std::string& name) const;
  const Mat& get(const std::string& name) const;

  /// Stores weights/biases as "<name>.w<l>" / "<name>.b<l>" and the layer
  /// sizes and dropout rate under meta["nets"][name].
  void put_net(const std::string& name, const Net& net);
  bool has_net(const std::string& name) const;
  Net get_net(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
/// Throws ParseError naming the offending line.
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Component packing. Optimizer moments are not stored.

void put_agent(Checkpoint& ckpt, const AgentState& agent);
/// Restores parameters into an agent built from the stored shapes.
AgentState get_agent(const Checkpoint& ckpt);

void put_sampling_policy(Checkpoint& ckpt, const SamplingPolicy& policy);
bool has_sampling_policy(const Checkpoint& ckpt);
SamplingPolicy get_sampling_policy(const Checkpoint& ckpt);

void put_bc(Checkpoint& ckpt, const BcPolicy& bc, const std::string& prefix = "bc");
bool has_bc(const Checkpoint& ckpt, const std::string& prefix = "bc");
BcPolicy get_bc(const Checkpoint& ckpt, const std::string& prefix = "bc");

}  // namespace dgnlab
