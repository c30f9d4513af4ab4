#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ampse/amp.h"
#include "ampse/risk.h"
#include "ampse/state_evolution.h"

namespace ampse {

/// One config struct for every subcommand; JSON configs are strict (unknown
/// keys are rejected) and CLI flags override file values.
struct ExperimentConfig {
  int K = 3;
  double alpha = 2.0;
  Index d = 4000;
  double lambda0 = 1.0;
  std::uint64_t seed = 1;
  std::int64_t mc_samples = 200000;
  int mc_blocks = 64;
  int t_max = 20;
  double damping = 0.5;
  double tol = 1e-6;
  double solver_tol = 1e-8;
  std::string output;
  std::string engine = "direct";    // direct | dice
  std::string channel = "softmax";  // softmax | gaussian
  int threads = 0;
  std::vector<double> lambda_grid = {1.0, 0.3, 0.1};
  std::string onsager = "fixed";  // fixed | se
  std::string dump_data;          // optional AMPD instance dump
  // verify-only knobs
  double tolerance_scale = 1.0;
  std::string only_check;
  std::string scratch_dir;
};

/// Applies a JSON object onto the config; throws InvalidInputError naming the
/// first unknown or ill-typed key.
void apply_json(ExperimentConfig& cfg, const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Field-range validation; throws InvalidInputError naming the field.
void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
/// FNV-1a over the canonical (sorted-key) serialization, hex.
std::string config_hash(const ExperimentConfig& cfg);

std::string format_g17(double v);

/// Header comment line carried by every CSV output.
std::string csv_header_line(const ExperimentConfig& cfg);

std::string trajectory_csv(const AmpTrajectory& traj, const ExperimentConfig& cfg);

struct Fig1Row {
  double lambda0;
  int t;
  double step_dist;
  double ratio;
  double rho_at_ref;
};
std::string fig1_csv(const std::vector<Fig1Row>& rows, const ExperimentConfig& cfg);

std::string se_rate_csv(const DeviationSequence& seq, double rho_at_ref,
                        const ExperimentConfig& cfg);

nlohmann::json mat_to_json(const Mat& m);  // row-major nested arrays
nlohmann::json fixed_point_json(const FixedPoint& fp, const ExperimentConfig& cfg);
nlohmann::json solve_report_json(const SolveReport& rep, const ExperimentConfig& cfg);
nlohmann::json dice_summary_json(const AmpTrajectory& traj, const ExperimentConfig& cfg);

/// Single-shot write (content assembled in memory so outputs are byte-stable).
void write_text_file(const std::string& path, const std::string& content);

// Experiment pipelines shared by the CLI and the reproducibility check.
// Exit codes: 0 ok, 1 invalid config, 2 non-convergence, 3 failed check.
struct CmdResult {
  int exit_code = 0;
  std::string message;
};

CmdResult cmd_fixed_point(const ExperimentConfig& cfg);
CmdResult cmd_rho_at(const ExperimentConfig& cfg, std::string* rho_out = nullptr);
CmdResult cmd_se_rate(const ExperimentConfig& cfg);
CmdResult cmd_amp(const ExperimentConfig& cfg);
CmdResult cmd_dice(const ExperimentConfig& cfg);
CmdResult cmd_solve(const ExperimentConfig& cfg);
CmdResult cmd_fig1(const ExperimentConfig& cfg);

}  // namespace ampse
