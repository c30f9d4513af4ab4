#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ampse/errors.h"
#include "ampse/io.h"
#include "ampse/kernels.h"
#include "ampse/verify.h"
#include "ampse/version.h"

namespace {

using ampse::ExperimentConfig;

void add_common_options(CLI::App* cmd, ExperimentConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON config file (strict keys)");
  cmd->add_option("--K", cfg.K, "number of classes");
  cmd->add_option("--alpha", cfg.alpha, "sample ratio n/d");
  cmd->add_option("--d", cfg.d, "parameter dimension");
  cmd->add_option("--lambda0", cfg.lambda0, "ridge regularization");
  cmd->add_option("--seed", cfg.seed, "master seed");
  cmd->add_option("--mc-samples", cfg.mc_samples, "Monte Carlo samples");
  cmd->add_option("--mc-blocks", cfg.mc_blocks, "Monte Carlo reduction blocks");
  cmd->add_option("--t-max", cfg.t_max, "iterations / steps");
  cmd->add_option("--damping", cfg.damping, "fixed-point damping");
  cmd->add_option("--tol", cfg.tol, "fixed-point update tolerance");
  cmd->add_option("--solver-tol", cfg.solver_tol, "risk-solver gradient tolerance");
  cmd->add_option("--output", cfg.output, "output file path");
  cmd->add_option("--engine", cfg.engine, "direct|dice");
  cmd->add_option("--channel", cfg.channel, "softmax|gaussian");
  cmd->add_option("--threads", cfg.threads, "worker cap (0 = auto; AMP_THREADS also caps)");
  cmd->add_option("--lambda-grid", cfg.lambda_grid, "lambda0 grid for fig1");
  cmd->add_option("--onsager", cfg.onsager, "fixed|se Onsager schedule");
  cmd->add_option("--dump-data", cfg.dump_data, "write the instance in AMPD binary format");
}

int run_command(const std::string& name, const ExperimentConfig& cfg) {
  ampse::CmdResult res;
  if (name == "fixed-point") {
    res = ampse::cmd_fixed_point(cfg);
  } else if (name == "rho-at") {
    std::string rho;
    res = ampse::cmd_rho_at(cfg, &rho);
    if (res.exit_code == 0) std::cout << rho << "\n";
  } else if (name == "se-rate") {
    res = ampse::cmd_se_rate(cfg);
  } else if (name == "amp") {
    res = ampse::cmd_amp(cfg);
  } else if (name == "dice") {
    res = ampse::cmd_dice(cfg);
  } else if (name == "solve") {
    res = ampse::cmd_solve(cfg);
  } else if (name == "fig1") {
    res = ampse::cmd_fig1(cfg);
  }
  if (!res.message.empty()) {
    (res.exit_code == 0 ? std::cout : std::cerr) << res.message << "\n";
  }
  return res.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AMP with non-separable denoisers: state evolution, AT stability, "
               "and matrix-free simulation"};
  app.set_version_flag("--version", ampse::kVersion);
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_path;
  bool list_checks = false;

  const char* subcommands[] = {"fixed-point", "rho-at", "se-rate", "amp",
                               "dice", "solve", "fig1", "verify"};
  for (const char* name : subcommands) {
    CLI::App* cmd = app.add_subcommand(name);
    add_common_options(cmd, cfg, config_path);
    if (std::string(name) == "verify") {
      cmd->add_flag("--list", list_checks, "print check names without running");
      cmd->add_option("--only", cfg.only_check, "run a single check by name");
      cmd->add_option("--tolerance-scale", cfg.tolerance_scale,
                      "scales every tolerance (0 forces failure)");
      cmd->add_option("--scratch-dir", cfg.scratch_dir,
                      "work dir for reproducibility outputs");
    }
  }

  CLI11_PARSE(app, argc, argv);
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    if (!config_path.empty()) {
      // file first, then re-parse so explicit flags override file values
      ExperimentConfig from_file = ampse::load_config(config_path);
      std::swap(cfg, from_file);
      CLI::App reparse{""};
      reparse.require_subcommand(1);
      std::string dummy_path;
      bool dummy_list = false;
      for (const char* sub : subcommands) {
        CLI::App* cmd = reparse.add_subcommand(sub);
        add_common_options(cmd, cfg, dummy_path);
        if (std::string(sub) == "verify") {
          cmd->add_flag("--list", dummy_list, "");
          cmd->add_option("--only", cfg.only_check, "");
          cmd->add_option("--tolerance-scale", cfg.tolerance_scale, "");
          cmd->add_option("--scratch-dir", cfg.scratch_dir, "");
        }
      }
      reparse.parse(argc, argv);
    }
    ampse::validate(cfg);

    if (name == "verify") {
      if (list_checks) {
        for (const auto& check : ampse::acceptance_check_names()) {
          std::cout << check << "\n";
        }
        return 0;
      }
      std::cerr << "ampse " << ampse::kVersion
                << " acceptance suite (simd backend: "
                << ampse::kernels::backend_name() << ")\n";
      auto results = ampse::run_acceptance(cfg, std::cerr);
      std::printf("%-26s %-6s %14s %14s %10s\n", "check", "result", "measured",
                  "tolerance", "seconds");
      bool all_pass = !results.empty();
      for (const auto& r : results) {
        std::printf("%-26s %-6s %14.6g %14.6g %10.2f\n", r.name.c_str(),
                    r.pass ? "pass" : "FAIL", r.measured, r.tolerance, r.seconds);
        all_pass = all_pass && r.pass;
      }
      return all_pass ? 0 : 3;
    }
    return run_command(name, cfg);
  } catch (const ampse::InvalidInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ampse::ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
