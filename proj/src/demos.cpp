#include "dgnlab/demos.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace dgnlab {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "dgnlab-demos";
constexpr int kFormatVersion = 1;

void write_vec(std::ostream& out, const Vec& v) {
  out << '[';
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out << ',';
    out << format_real(v[i]);
  }
  out << ']';
}

Vec read_vec(const json& j, const char* key, Index dim, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array()) throw ParseError(line, std::string("missing array '") + key + "'");
  if (static_cast<Index>(it->size()) != dim)
    throw ParseError(line, std::string("'") + key + "' has " + std::to_string(it->size()) +
                               " entries, expected " + std::to_string(dim));
  Vec v(dim);
  for (Index i = 0; i < dim; ++i) {
    const json& e = (*it)[static_cast<std::size_t>(i)];
    if (!e.is_number()) throw ParseError(line, std::string("non-numeric entry in '") + key + "'");
    v[i] = e.get<double>();
  }
  return v;
}

template <typename T>
T read_field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(line, std::string("missing key '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError(line, std::string("bad value for '") + key + "'");
  }
}

}  // namespace

std::string format_real(double v) {
  if (!std::isfinite(v)) throw NumericError("format_real: non-finite value");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  if (s == "-0") s = "-0.0";
  return s;
}

std::size_t DemoDataset::num_transitions() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.size();
  return n;
}

std::vector<Transition> DemoDataset::flat() const {
  std::vector<Transition> out;
  out.reserve(num_transitions());
  for (const auto& traj : trajectories) out.insert(out.end(), traj.begin(), traj.end());
  return out;
}

DemoDataset generate_demos(const EnvSpec& spec, std::size_t num_traj, double expert_noise_std,
                           const std::vector<ModeWeight>& mode_mix, std::uint64_t seed) {
  if (num_traj < 1) throw ContractError("generate_demos: num_traj must be >= 1");
  if (mode_mix.empty()) throw ContractError("generate_demos: empty mode mix");
  double total = 0.0;
  for (const auto& mw : mode_mix) {
    if (mw.weight < 0.0) throw ContractError("generate_demos: negative mode weight");
    total += mw.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("generate_demos: mode weights must sum to 1");

  DemoDataset d;
  d.env_name = to_string(spec.name);
  d.obs_dim = spec.obs_dim;
  d.act_dim = spec.act_dim;
  d.meta.mode_mix = mode_mix;
  d.meta.expert_noise_std = expert_noise_std;
  d.meta.seed = seed;

  SeededRng rng(seed);
  const std::size_t max_attempts = 100 * num_traj;
  for (std::size_t attempt = 0; attempt < max_attempts && d.trajectories.size() < num_traj; ++attempt) {
    const double u = rng.uniform();
    ExpertMode mode = mode_mix.back().mode;
    double acc = 0.0;
    for (const auto& mw : mode_mix) {
      acc += mw.weight;
      if (u < acc) {
        mode = mw.mode;
        break;
      }
    }
    auto [state, obs] = reset(spec, rng.next_u64());
    std::vector<Transition> traj;
    while (!state.done) {
      Vec a = expert_action(spec, state, mode);
      if (expert_noise_std > 0.0) a += expert_noise_std * gaussian_draw(rng, spec.act_dim);
      auto r = step(spec, state, a);
      state = std::move(r.state);
      traj.push_back(std::move(r.transition));
    }
    if (traj.back().success) {
      d.trajectories.push_back(std::move(traj));
      d.meta.traj_modes.push_back(mode);
    }
  }
  if (d.trajectories.size() < num_traj)
    throw std::runtime_error("generate_demos: expert succeeded on only " +
                             std::to_string(d.trajectories.size()) + " of " +
                             std::to_string(max_attempts) + " attempts");
  return d;
}

void validate_demos(const DemoDataset& d) {
  if (d.meta.traj_modes.size() != d.trajectories.size())
    throw ContractError("demos: traj_modes count does not match trajectory count");
  for (std::size_t t = 0; t < d.trajectories.size(); ++t) {
    const auto& traj = d.trajectories[t];
    const std::string where = "trajectory " + std::to_string(t);
    if (traj.empty()) throw ContractError(where + " is empty");
    if (!traj.back().success) throw ContractError(where + " does not end in success");
    for (std::size_t k = 0; k < traj.size(); ++k) {
      const Transition& tr = traj[k];
      if (tr.obs.size() != d.obs_dim || tr.next_obs.size() != d.obs_dim || tr.action.size() != d.act_dim)
        throw ContractError(where + ": dimension mismatch at step " + std::to_string(k));
      if (tr.reward != (tr.success ? 1.0 : 0.0))
        throw ContractError(where + ": reward disagrees with success at step " + std::to_string(k));
      if (k + 1 < traj.size()) {
        if (tr.done || tr.success)
          throw ContractError(where + ": terminal flag before the last step " + std::to_string(k));
        if (tr.next_obs != traj[k + 1].obs)
          throw ContractError(where + ": broken chain between steps " + std::to_string(k) + " and " +
                              std::to_string(k + 1));
      } else if (!tr.done) {
        throw ContractError(where + ": last step is not done");
      }
    }
  }
}

void write_demos(std::ostream& out, const DemoDataset& d) {
  out << "{\"format\":\"" << kFormatTag << "\",\"version\":" << kFormatVersion
      << ",\"env_name\":" << json(d.env_name).dump() << ",\"obs_dim\":" << d.obs_dim
      << ",\"act_dim\":" << d.act_dim << ",\"count\":" << d.trajectories.size()
      << ",\"meta\":{\"expert_noise_std\":" << format_real(d.meta.expert_noise_std)
      << ",\"seed\":" << d.meta.seed << ",\"mode_mix\":[";
  for (std::size_t i = 0; i < d.meta.mode_mix.size(); ++i)
    out << (i ? "," : "") << "[\"" << to_string(d.meta.mode_mix[i].mode) << "\","
        << format_real(d.meta.mode_mix[i].weight) << "]";
  out << "],\"traj_modes\":[";
  for (std::size_t i = 0; i < d.meta.traj_modes.size(); ++i)
    out << (i ? "," : "") << "\"" << to_string(d.meta.traj_modes[i]) << "\"";
  out << "]}}\n";
  for (std::size_t t = 0; t < d.trajectories.size(); ++t) {
    const auto& traj = d.trajectories[t];
    for (std::size_t k = 0; k < traj.size(); ++k) {
      const Transition& tr = traj[k];
      out << "{\"obs\":";
      write_vec(out, tr.obs);
      out << ",\"action\":";
      write_vec(out, tr.action);
      out << ",\"reward\":" << format_real(tr.reward) << ",\"next_obs\":";
      write_vec(out, tr.next_obs);
      out << ",\"done\":" << (tr.done ? "true" : "false")
          << ",\"success\":" << (tr.success ? "true" : "false") << ",\"traj_id\":" << t
          << ",\"step\":" << k << "}\n";
    }
  }
}

DemoDataset read_demos(std::istream& in) {
  std::string text;
  std::size_t line_no = 0;
  auto parse_line = [&](const std::string& s) {
    try {
      json j = json::parse(s);
      if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
      return j;
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed record: ") + e.what());
    }
  };

  if (!std::getline(in, text)) throw ParseError(1, "missing header");
  ++line_no;
  const json header = parse_line(text);
  if (header.value("format", std::string()) != kFormatTag)
    throw ParseError(line_no, "not a dgnlab demo file");
  if (header.value("version", 0) != kFormatVersion) throw ParseError(line_no, "unsupported version");

  DemoDataset d;
  d.env_name = read_field<std::string>(header, "env_name", line_no);
  d.obs_dim = read_field<Index>(header, "obs_dim", line_no);
  d.act_dim = read_field<Index>(header, "act_dim", line_no);
  const auto count = read_field<std::size_t>(header, "count", line_no);
  if (!header.contains("meta")) throw ParseError(line_no, "missing key 'meta'");
  const json& meta = header["meta"];
  try {
    d.meta.expert_noise_std = meta.at("expert_noise_std").get<double>();
    d.meta.seed = meta.at("seed").get<std::uint64_t>();
    for (const auto& e : meta.at("mode_mix"))
      d.meta.mode_mix.push_back({parse_expert_mode(e.at(0).get<std::string>()), e.at(1).get<double>()});
    for (const auto& e : meta.at("traj_modes")) d.meta.traj_modes.push_back(parse_expert_mode(e.get<std::string>()));
  } catch (const std::exception& e) {
    throw ParseError(line_no, std::string("bad meta: ") + e.what());
  }

  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    const json j = parse_line(text);
    Transition tr;
    tr.obs = read_vec(j, "obs", d.obs_dim, line_no);
    tr.action = read_vec(j, "action", d.act_dim, line_no);
    tr.reward = read_field<double>(j, "reward", line_no);
    tr.next_obs = read_vec(j, "next_obs", d.obs_dim, line_no);
    tr.done = read_field<bool>(j, "done", line_no);
    tr.success = read_field<bool>(j, "success", line_no);
    const auto traj_id = read_field<std::size_t>(j, "traj_id", line_no);
    const auto step_idx = read_field<std::size_t>(j, "step", line_no);

    if (traj_id == d.trajectories.size()) {
      if (!d.trajectories.empty() && !d.trajectories.back().back().done)
        throw ParseError(line_no, "trajectory " + std::to_string(traj_id - 1) + " ends without done");
      d.trajectories.emplace_back();
    } else if (traj_id + 1 != d.trajectories.size()) {
      throw ParseError(line_no, "traj_id out of sequence");
    }
    auto& traj = d.trajectories.back();
    if (step_idx != traj.size()) throw ParseError(line_no, "step out of sequence");
    if (!traj.empty() && traj.back().next_obs != tr.obs)
      throw ParseError(line_no, "broken chain: obs differs from previous next_obs");
    if (!traj.empty() && traj.back().done) throw ParseError(line_no, "transition after done");
    traj.push_back(std::move(tr));
  }
  if (d.trajectories.size() != count)
    throw ParseError(line_no, "header declares " + std::to_string(count) + " trajectories, found " +
                                  std::to_string(d.trajectories.size()));
  if (!d.trajectories.empty() && !d.trajectories.back().back().success)
    throw ParseError(line_no, "last trajectory does not end in success (truncated file?)");
  try {
    validate_demos(d);
  } catch (const ContractError& e) {
    throw ParseError(line_no, e.what());
  }
  return d;
}

void save_demos(const DemoDataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_demos(out, d);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

DemoDataset load_demos(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open demo file " + path.string());
  return read_demos(in);
}

}  // namespace dgnlab
