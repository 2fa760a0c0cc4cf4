// dgnlab command-line driver.

#include "dgnlab/harness.hpp"
#include "dgnlab/oracles.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace dgnlab;

namespace {

/// Exit code 2: the user asked for something that cannot be done as written.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

std::vector<ModeWeight> parse_modes(const std::string& text) {
  std::vector<ModeWeight> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    ModeWeight m{};
    try {
      m.mode = parse_expert_mode(item.substr(0, colon));
      m.weight = colon == std::string::npos ? 1.0 : std::stod(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw UsageError("bad --modes entry '" + item + "' (expected e.g. A:0.5,B:0.5)");
    }
    out.push_back(m);
  }
  if (out.empty()) throw UsageError("--modes is empty");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-guided exploration noise lab"};
  app.require_subcommand(1);

  // gen-demos
  auto* gen = app.add_subcommand("gen-demos", "Record scripted-expert demonstrations");
  std::string gen_env = "point_maze", gen_modes = "A", gen_out;
  std::size_t gen_count = 25;
  double gen_noise = 0.0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--env", gen_env, "point_maze | reacher_sparse | pusher_toy")->capture_default_str();
  gen->add_option("--count", gen_count, "successful trajectories to keep")->capture_default_str();
  gen->add_option("--noise", gen_noise, "std of Gaussian noise added to expert actions")->capture_default_str();
  gen->add_option("--modes", gen_modes, "expert mode mix, e.g. A:0.5,B:0.5")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--out", gen_out)->required();

  // train
  auto* tr = app.add_subcommand("train", "Run one experiment");
  std::string tr_config;
  std::optional<std::uint64_t> tr_seed;
  std::vector<std::string> tr_overrides;
  tr->add_option("--config", tr_config, "key = value config file")->required();
  tr->add_option("--seed", tr_seed, "overrides the config seed");
  tr->add_option("overrides", tr_overrides, "key=value pairs applied after the config file");
  bool tr_progress = false;
  tr->add_flag("--progress", tr_progress, "report training-episode success to stderr as the run goes");

  // train-bc
  auto* tbc = app.add_subcommand("train-bc", "Fit a behavior-cloning policy and save it as a checkpoint");
  std::string tbc_demos, tbc_out;
  std::uint64_t tbc_seed = 0;
  bool tbc_underfit = false;
  int tbc_epochs = BcConfig{}.epochs;
  tbc->add_option("--demos", tbc_demos)->required();
  tbc->add_option("--out", tbc_out)->required();
  tbc->add_option("--seed", tbc_seed)->capture_default_str();
  tbc->add_option("--epochs", tbc_epochs)->capture_default_str();
  tbc->add_flag("--underfit", tbc_underfit, "stop after 100 optimizer steps");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint's deterministic policy");
  std::string ev_ckpt, ev_env;
  int ev_episodes = 100;
  std::uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--env", ev_env, "defaults to the env recorded in the checkpoint");
  ev->add_option("--episodes", ev_episodes)->capture_default_str();
  ev->add_option("--seed", ev_seed)->capture_default_str();

  // analyze-kl
  auto* kl = app.add_subcommand("analyze-kl", "KL(policy || BC) over a run's checkpoints");
  std::string kl_run, kl_bc, kl_demos, kl_out;
  kl->add_option("--run", kl_run, "run directory holding ckpt_*.ckpt / final.ckpt")->required();
  kl->add_option("--bc", kl_bc, "BC checkpoint from train-bc")->required();
  kl->add_option("--demos", kl_demos)->required();
  kl->add_option("--out", kl_out, "defaults to <run>/kl.csv");

  // selftest
  auto* st = app.add_subcommand("selftest", "Run the built-in oracle and property checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "dgnlab: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) {
      const EnvSpec spec = make_env_spec(gen_env);
      const DemoDataset d = generate_demos(spec, gen_count, gen_noise, parse_modes(gen_modes), gen_seed);
      save_demos(d, gen_out);
      std::cout << "wrote " << d.trajectories.size() << " trajectories (" << d.num_transitions() << " transitions) to "
                << gen_out << "\n";
    } else if (*tr) {
      require_file(tr_config, "config file");
      ExperimentConfig cfg = load_config(tr_config);
      for (const auto& kv : tr_overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("override '" + kv + "' is not key=value");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (tr_seed) cfg.seed = *tr_seed;
      require_file(cfg.demo_path, "demo file");
      if (!cfg.kl_reference.empty()) require_file(cfg.kl_reference, "kl_reference");
      TrainHooks hooks;
      long window_eps = 0, window_wins = 0;
      if (tr_progress) {
        hooks.on_episode = [&](long episode, long step, const EpisodeResult& res) {
          ++window_eps;
          window_wins += res.success ? 1 : 0;
          if (window_eps == 20) {
            std::cerr << "step " << step << "  episodes " << episode + 1 << "  train success (last 20) "
                      << fmt(static_cast<double>(window_wins) / 20.0) << std::endl;
            window_eps = window_wins = 0;
          }
        };
      }
      const TrainResult r = train(cfg, hooks);
      const MetricsRow& last = r.rows.back();
      std::cout << "steps " << r.env_steps << "  episodes " << r.episodes << "  final success " << fmt(last.success)
                << "  metrics " << r.metrics_path.string() << "\n";
    } else if (*tbc) {
      require_file(tbc_demos, "demo file");
      const DemoDataset d = load_demos(tbc_demos);
      BcConfig bcfg = tbc_underfit ? BcConfig::underfit() : BcConfig{};
      bcfg.epochs = tbc_epochs;
      SeededRng rng(tbc_seed);
      const BcPolicy bc = bc_train(DemoStore(d), d.obs_dim, d.act_dim, bcfg, rng);
      Checkpoint ckpt;
      ckpt.meta["env"] = d.env_name;
      put_bc(ckpt, bc);
      save_checkpoint(ckpt, tbc_out);
      std::cout << "BC trained for " << bc.steps << " steps, saved to " << tbc_out << "\n";
    } else if (*ev) {
      require_file(ev_ckpt, "checkpoint");
      const Checkpoint ckpt = load_checkpoint(ev_ckpt);
      const std::string env = ev_env.empty() ? ckpt.meta.value("env", std::string()) : ev_env;
      if (env.empty()) throw UsageError("checkpoint records no env; pass --env");
      const EnvSpec spec = make_env_spec(env);
      EvalResult r;
      if (!ckpt.meta.contains("agent") && has_bc(ckpt)) {
        // A bare BC checkpoint: evaluate its mean action.
        const BcPolicy bc = get_bc(ckpt);
        if (bc.mean_net.input_dim() != spec.obs_dim || bc.mean_net.output_dim() != spec.act_dim)
          throw UsageError("checkpoint dimensions do not match env " + env);
        r = evaluate(spec, [&bc](const Vec& obs, const EnvState&) { return bc_mean(bc, obs); }, ev_episodes, ev_seed);
      } else {
        const PolicySnapshot snap = snapshot_from_checkpoint(ckpt);
        if (snap.agent.obs_dim != spec.obs_dim || snap.agent.act_dim != spec.act_dim)
          throw UsageError("checkpoint dimensions do not match env " + env);
        r = evaluate(spec, greedy_policy(snap.agent, snap.ibrl_bc ? &*snap.ibrl_bc : nullptr), ev_episodes, ev_seed);
      }
      std::cout << "success " << fmt(r.success_rate) << "  return " << fmt(r.mean_return) << "  ep_len "
                << fmt(r.mean_length) << "\n";
    } else if (*kl) {
      if (!fs::is_directory(kl_run)) throw UsageError("run directory not found: " + kl_run);
      require_file(kl_bc, "BC checkpoint");
      require_file(kl_demos, "demo file");
      const BcPolicy bc = get_bc(load_checkpoint(kl_bc));
      const auto points = kl_analysis(kl_run, bc, load_demos(kl_demos));
      const fs::path out = kl_out.empty() ? fs::path(kl_run) / "kl.csv" : fs::path(kl_out);
      std::ofstream f(out);
      f << "step,kl\n";
      for (const auto& p : points) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%ld,%.10g\n", p.step, p.kl);
        f << buf;
        std::cout << buf;
      }
    } else if (*st) {
      bool ok = true;
      run_selftest([&](const CheckResult& c) {
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << "  " << c.detail << std::endl;
        ok = ok && c.pass;
      });
      return ok ? 0 : 1;
    }
  } catch (const UsageError& e) {
    std::cerr << "dgnlab: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "dgnlab: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "dgnlab: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dgnlab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
