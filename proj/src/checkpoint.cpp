#include "dgnlab/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

namespace dgnlab {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "dgnlab-ckpt";
constexpr int kFormatVersion = 1;

json optimizer_meta(const NetOptimizer& opt) {
  return {{"learning_rate", opt.config.learning_rate},
          {"weight_decay", opt.config.weight_decay},
          {"beta1", opt.config.beta1},
          {"beta2", opt.config.beta2},
          {"epsilon", opt.config.epsilon}};
}

AdamWConfig optimizer_from(const json& j) {
  AdamWConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  return c;
}

}  // namespace

void Checkpoint::put(const std::string& name, Mat value) {
  auto it = std::ranges::find_if(tensors, [&](const auto& t) { return t.first == name; });
  if (it != tensors.end()) {
    it->second = std::move(value);
  } else {
    tensors.emplace_back(name, std::move(value));
  }
}

bool Checkpoint::has(const std::string& name) const {
  return std::ranges::any_of(tensors, [&](const auto& t) { return t.first == name; });
}

const Mat& Checkpoint::get(const std::string& name) const {
  auto it = std::ranges::find_if(tensors, [&](const auto& t) { return t.first == name; });
  if (it == tensors.end()) throw ContractError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

void Checkpoint::put_net(const std::string& name, const Net& net) {
  meta["nets"][name] = {{"layer_sizes", net.layer_sizes}, {"dropout_rate", net.dropout_rate}};
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    put(name + ".w" + std::to_string(l), net.weights[l]);
    put(name + ".b" + std::to_string(l), Mat(net.biases[l]));
  }
}

bool Checkpoint::has_net(const std::string& name) const {
  return meta.contains("nets") && meta["nets"].contains(name);
}

Net Checkpoint::get_net(const std::string& name) const {
  if (!has_net(name)) throw ContractError("checkpoint: missing net '" + name + "'");
  const json& m = meta["nets"][name];
  Net net;
  net.layer_sizes = m.at("layer_sizes").get<std::vector<Index>>();
  net.dropout_rate = m.at("dropout_rate").get<double>();
  for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
    const Mat& w = get(name + ".w" + std::to_string(l));
    const Mat& b = get(name + ".b" + std::to_string(l));
    if (w.rows() != net.layer_sizes[l + 1] || w.cols() != net.layer_sizes[l] || b.size() != net.layer_sizes[l + 1])
      throw ShapeError("checkpoint: net '" + name + "' layer " + std::to_string(l) + " does not match its manifest");
    net.weights.push_back(w);
    net.biases.push_back(b.reshaped());
  }
  return net;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  json manifest = json::array();
  for (const auto& [name, m] : ckpt.tensors) manifest.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}});
  json header = {{"format", kFormatTag}, {"version", kFormatVersion}, {"meta", ckpt.meta}, {"manifest", manifest}};
  out << header.dump() << '\n';
  for (const auto& [name, m] : ckpt.tensors) {
    out << "{\"name\":" << json(name).dump() << ",\"shape\":[" << m.rows() << ',' << m.cols() << "],\"data\":[";
    bool first = true;
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) {
        if (!first) out << ',';
        first = false;
        out << format_real(m(r, c));
      }
    out << "]}\n";
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string text;
  std::size_t line_no = 0;
  auto parse = [&](const std::string& s) {
    try {
      return json::parse(s);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed record: ") + e.what());
    }
  };
  if (!std::getline(in, text)) throw ParseError(1, "missing header");
  ++line_no;
  const json header = parse(text);
  if (!header.is_object() || header.value("format", std::string()) != kFormatTag)
    throw ParseError(line_no, "not a dgnlab checkpoint");
  if (header.value("version", 0) != kFormatVersion) throw ParseError(line_no, "unsupported version");
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", json::object());
  const json manifest = header.value("manifest", json::array());

  for (const json& entry : manifest) {
    if (!std::getline(in, text)) throw ParseError(line_no + 1, "truncated: missing tensor '" + entry.value("name", std::string()) + "'");
    ++line_no;
    const json j = parse(text);
    try {
      const std::string name = j.at("name").get<std::string>();
      if (name != entry.at("name").get<std::string>()) throw ParseError(line_no, "tensor order differs from manifest");
      const Index rows = j.at("shape").at(0).get<Index>();
      const Index cols = j.at("shape").at(1).get<Index>();
      const json& data = j.at("data");
      if (static_cast<Index>(data.size()) != rows * cols) throw ParseError(line_no, "tensor '" + name + "' has wrong length");
      Mat m(rows, cols);
      for (Index r = 0, k = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c, ++k) m(r, c) = data[static_cast<std::size_t>(k)].get<double>();
      ckpt.tensors.emplace_back(name, std::move(m));
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("bad tensor record: ") + e.what());
    }
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

void put_agent(Checkpoint& ckpt, const AgentState& a) {
  const AgentConfig& c = a.config;
  ckpt.meta["agent"] = {{"obs_dim", a.obs_dim},
                        {"act_dim", a.act_dim},
                        {"gamma", c.gamma},
                        {"polyak", c.polyak},
                        {"ensemble_size", c.ensemble_size},
                        {"target_subset", c.target_subset},
                        {"utd_ratio", c.utd_ratio},
                        {"actor_update_interval", c.actor_update_interval},
                        {"explore_std", c.explore_std},
                        {"learning_rate", c.learning_rate},
                        {"weight_decay", c.weight_decay},
                        {"batch_size", c.batch_size},
                        {"actor_hidden", c.actor_hidden},
                        {"critic_hidden", c.critic_hidden},
                        {"actor_dropout_rate", c.actor_dropout_rate},
                        {"env_step", a.env_step},
                        {"critic_updates", a.critic_updates},
                        {"actor_updates", a.actor_updates}};
  ckpt.put_net("actor", a.actor);
  for (std::size_t i = 0; i < a.critics.size(); ++i) {
    ckpt.put_net("critic" + std::to_string(i), a.critics[i]);
    ckpt.put_net("target" + std::to_string(i), a.target_critics[i]);
  }
}

AgentState get_agent(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("agent")) throw ContractError("checkpoint: no agent stored");
  const json& m = ckpt.meta["agent"];
  AgentConfig c;
  c.gamma = m.at("gamma");
  c.polyak = m.at("polyak");
  c.ensemble_size = m.at("ensemble_size");
  c.target_subset = m.at("target_subset");
  c.utd_ratio = m.at("utd_ratio");
  c.actor_update_interval = m.at("actor_update_interval");
  c.explore_std = m.at("explore_std");
  c.learning_rate = m.at("learning_rate");
  c.weight_decay = m.at("weight_decay");
  c.batch_size = m.at("batch_size");
  c.actor_hidden = m.at("actor_hidden").get<std::vector<Index>>();
  c.critic_hidden = m.at("critic_hidden").get<std::vector<Index>>();
  c.actor_dropout_rate = m.at("actor_dropout_rate");
  SeededRng rng(0);
  AgentState a = make_agent(m.at("obs_dim").get<Index>(), m.at("act_dim").get<Index>(), c, rng);
  a.actor = ckpt.get_net("actor");
  for (int i = 0; i < c.ensemble_size; ++i) {
    a.critics[static_cast<std::size_t>(i)] = ckpt.get_net("critic" + std::to_string(i));
    a.target_critics[static_cast<std::size_t>(i)] = ckpt.get_net("target" + std::to_string(i));
  }
  a.env_step = m.at("env_step");
  a.critic_updates = m.at("critic_updates");
  a.actor_updates = m.at("actor_updates");
  return a;
}

void put_sampling_policy(Checkpoint& ckpt, const SamplingPolicy& p) {
  json history = json::array();
  for (bool b : p.shutoff.history()) history.push_back(b);
  ckpt.meta["dgn"] = {{"variant", to_string(p.variant)},
                      {"obs_dim", p.obs_dim},
                      {"act_dim", p.act_dim},
                      {"diag_floor", p.covariance.diag_floor},
                      {"state_conditioned", p.covariance.state_conditioned},
                      {"optimizer", optimizer_meta(p.covariance.optimizer)},
                      {"anneal_enabled", p.schedule.enabled},
                      {"anneal_tau", p.schedule.tau},
                      {"shutoff_enabled", p.shutoff.enabled()},
                      {"shutoff_window", p.shutoff.window()},
                      {"shutoff_threshold", p.shutoff.threshold()},
                      {"shutoff_history", history},
                      {"shutoff_tripped", p.shutoff.tripped()},
                      {"update_interval", p.update_interval},
                      {"epochs_per_update", p.epochs_per_update},
                      {"fit_batch_size", p.fit_batch_size},
                      {"fit_calls", p.fit_calls}};
  ckpt.put_net("dgn.cov", p.covariance.net);
  if (p.residual) ckpt.put_net("dgn.residual", p.residual->net);
}

bool has_sampling_policy(const Checkpoint& ckpt) { return ckpt.meta.contains("dgn"); }

SamplingPolicy get_sampling_policy(const Checkpoint& ckpt) {
  if (!has_sampling_policy(ckpt)) throw ContractError("checkpoint: no sampling policy stored");
  const json& m = ckpt.meta["dgn"];
  SamplingPolicy p;
  p.variant = parse_dgn_variant(m.at("variant").get<std::string>());
  p.obs_dim = m.at("obs_dim");
  p.act_dim = m.at("act_dim");
  const AdamWConfig opt = optimizer_from(m.at("optimizer"));
  p.covariance.net = ckpt.get_net("dgn.cov");
  p.covariance.diag_floor = m.at("diag_floor");
  p.covariance.state_conditioned = m.at("state_conditioned");
  p.covariance.optimizer = adamw_init(p.covariance.net, opt);
  if (ckpt.has_net("dgn.residual")) {
    ResidualHead r;
    r.net = ckpt.get_net("dgn.residual");
    r.optimizer = adamw_init(r.net, opt);
    p.residual = std::move(r);
  }
  p.schedule = {m.at("anneal_enabled").get<bool>(), m.at("anneal_tau").get<double>()};
  p.shutoff = ShutoffMonitor(m.at("shutoff_enabled"), m.at("shutoff_window"), m.at("shutoff_threshold"));
  std::deque<bool> history;
  for (const auto& b : m.at("shutoff_history")) history.push_back(b.get<bool>());
  p.shutoff.restore(std::move(history), m.at("shutoff_tripped"));
  p.update_interval = m.at("update_interval");
  p.epochs_per_update = m.at("epochs_per_update");
  p.fit_batch_size = m.at("fit_batch_size");
  p.fit_calls = m.at("fit_calls");
  return p;
}

void put_bc(Checkpoint& ckpt, const BcPolicy& bc, const std::string& prefix) {
  ckpt.meta[prefix] = {{"hidden", bc.config.hidden},
                       {"epochs", bc.config.epochs},
                       {"learning_rate", bc.config.learning_rate},
                       {"batch_size", bc.config.batch_size},
                       {"max_steps", bc.config.max_steps},
                       {"steps", bc.steps}};
  ckpt.put_net(prefix + ".mean", bc.mean_net);
  ckpt.put_net(prefix + ".log_std", bc.log_std);
}

bool has_bc(const Checkpoint& ckpt, const std::string& prefix) { return ckpt.meta.contains(prefix) && ckpt.has_net(prefix + ".mean"); }

BcPolicy get_bc(const Checkpoint& ckpt, const std::string& prefix) {
  if (!has_bc(ckpt, prefix)) throw ContractError("checkpoint: no BC policy under '" + prefix + "'");
  const json& m = ckpt.meta[prefix];
  BcPolicy bc;
  bc.config.hidden = m.at("hidden").get<std::vector<Index>>();
  bc.config.epochs = m.at("epochs");
  bc.config.learning_rate = m.at("learning_rate");
  bc.config.batch_size = m.at("batch_size");
  bc.config.max_steps = m.at("max_steps");
  bc.steps = m.at("steps");
  bc.mean_net = ckpt.get_net(prefix + ".mean");
  bc.log_std = ckpt.get_net(prefix + ".log_std");
  AdamWConfig opt;
  opt.learning_rate = bc.config.learning_rate;
  bc.mean_opt = adamw_init(bc.mean_net, opt);
  bc.std_opt = adamw_init(bc.log_std, opt);
  return bc;
}

}  // namespace dgnlab
