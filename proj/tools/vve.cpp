// Command line front end: training, evaluation, linked two-process runs,
// and trace replay, wired to distinct exit codes per failure class.
#include <cstdint>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vve/config.hpp"
#include "vve/errors.hpp"
#include "vve/runner.hpp"
#include "vve/version.hpp"

namespace {

/// Load the configuration file (if given) and apply key=value overrides.
vve::Config make_config(const std::string& config_path,
                        const std::vector<std::string>& overrides) {
  vve::Config cfg;
  if (!config_path.empty()) vve::load_config_file(cfg, config_path);
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw vve::ConfigError("override must look like section.key=value", ov);
    vve::apply_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
  }
  vve::validate(cfg);
  return cfg;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIL / HIL / replay pipeline for an emergency-braking agent"};
  app.set_version_flag("--version", std::string(vve::kVersion));
  app.require_subcommand(1);
  // Let global options (-c, -s, --seed) appear after the subcommand too.
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  app.add_option("-c,--config", config_path, "configuration file (INI)")
      ->group("Global");
  app.add_option("-s,--set", overrides,
                 "override, e.g. --set agent.episodes=200")
      ->group("Global");
  app.add_option("--seed", seed, "master random seed")->group("Global");

  std::function<int()> action;

  // --- print-config ------------------------------------------------------
  auto* cmd_print = app.add_subcommand(
      "print-config", "print the effective configuration and exit");
  bool as_json = false;
  cmd_print->add_flag("--json", as_json, "emit JSON instead of INI");
  cmd_print->callback([&] {
    action = [&]() -> int {
      const vve::Config cfg = make_config(config_path, overrides);
      if (as_json)
        std::cout << vve::config_to_json(cfg).dump(2) << "\n";
      else
        std::cout << vve::print_config(cfg);
      return vve::kExitOk;
    };
  });

  // --- mil-train ---------------------------------------------------------
  auto* cmd_train =
      app.add_subcommand("mil-train", "train the braking agent in simulation");
  std::string train_out = "runs/train";
  cmd_train->add_option("-o,--out", train_out, "output directory");
  cmd_train->callback([&] {
    action = [&]() -> int {
      const vve::Config cfg = make_config(config_path, overrides);
      vve::mil_train(cfg, seed, train_out);
      std::cout << "wrote " << train_out << "/model.json\n";
      return vve::kExitOk;
    };
  });

  // --- mil-eval ----------------------------------------------------------
  auto* cmd_eval =
      app.add_subcommand("mil-eval", "evaluate a trained model in simulation");
  std::string eval_model;
  std::string eval_out = "runs/eval";
  int eval_episodes = 100;
  cmd_eval->add_option("-m,--model", eval_model, "model file")->required();
  cmd_eval->add_option("-o,--out", eval_out, "output directory");
  cmd_eval->add_option("-n,--episodes", eval_episodes, "evaluation episodes");
  cmd_eval->callback([&] {
    action = [&]() -> int {
      const vve::Config cfg = make_config(config_path, overrides);
      vve::mil_eval(cfg, seed, eval_model, eval_episodes, eval_out);
      std::cout << "wrote " << eval_out << "/summary.json\n";
      return vve::kExitOk;
    };
  });

  // --- hil-run -----------------------------------------------------------
  auto* cmd_hil = app.add_subcommand(
      "hil-run", "run one side of the two-process linked setup");
  std::string hil_role;
  std::string hil_model;
  std::string hil_out = "runs/hil";
  cmd_hil->add_option("-r,--role", hil_role, "environment | controller")
      ->required()
      ->check(CLI::IsMember({"environment", "controller"}));
  cmd_hil->add_option(
      "-m,--model", hil_model,
      "model file (required for controller; enables the deviation report "
      "for environment)");
  cmd_hil->add_option("-o,--out", hil_out, "output directory");
  cmd_hil->callback([&] {
    action = [&]() -> int {
      const vve::Config cfg = make_config(config_path, overrides);
      if (hil_role == "environment") {
        vve::hil_run_environment(cfg, seed, hil_model, hil_out);
        std::cout << "wrote " << hil_out << "/metrics.csv\n";
      } else {
        if (hil_model.empty())
          throw vve::ConfigError("controller role needs --model");
        vve::hil_run_controller(cfg, seed, hil_model, hil_out);
        std::cout << "controller session finished\n";
      }
      return vve::kExitOk;
    };
  });

  // --- vve-replay --------------------------------------------------------
  auto* cmd_replay = app.add_subcommand(
      "vve-replay", "replay a recorded pose trace against the live stream");
  std::string replay_trace;
  std::string replay_out = "runs/replay";
  std::string replay_pacing = "max";
  cmd_replay->add_option("-t,--trace", replay_trace, "recorded pose trace CSV")
      ->required();
  cmd_replay->add_option("-o,--out", replay_out, "output directory");
  cmd_replay
      ->add_option("-p,--pacing", replay_pacing,
                   "send pacing: back-to-back or recorded cadence")
      ->check(CLI::IsMember({"max", "realtime"}));
  cmd_replay->callback([&] {
    action = [&]() -> int {
      const vve::Config cfg = make_config(config_path, overrides);
      const vve::ReplayOutcome r =
          vve::vve_replay(cfg, replay_trace, replay_out, replay_pacing);
      std::cout << "replayed " << r.rows << " rows (" << r.applied
                << " applied, " << r.dropped << " dropped), rms " << r.rms_m
                << " m, max " << r.max_m << " m\n";
      return vve::kExitOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int cli_rc = app.exit(e);
    return cli_rc == 0 ? vve::kExitOk : vve::kExitUsage;
  }

  try {
    return action();
  } catch (const vve::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return vve::kExitConfig;
  } catch (const vve::LinkError& e) {
    std::cerr << "link error: " << e.what() << "\n";
    return vve::kExitHandshake;
  } catch (const vve::SimulationFaultError& e) {
    std::cerr << "simulation fault: " << e.what() << "\n";
    return vve::kExitSimulationFault;
  } catch (const vve::ModelIncompatibleError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return vve::kExitModelIncompatible;
  } catch (const vve::IngestError& e) {
    std::cerr << "ingest error: " << e.what() << "\n";
    return vve::kExitIngest;
  } catch (const vve::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return vve::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
