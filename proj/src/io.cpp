#include "ampse/io.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ampse/dice.h"
#include "ampse/errors.h"
#include "ampse/version.h"

namespace ampse {

namespace {

using nlohmann::json;

template <typename T>
void read_field(const json& j, const std::string& key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidInputError("config field '" + key + "' has the wrong type");
  }
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void apply_json(ExperimentConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidInputError("config root must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "K") read_field(j, key, cfg.K);
    else if (key == "alpha") read_field(j, key, cfg.alpha);
    else if (key == "d") read_field(j, key, cfg.d);
    else if (key == "lambda0") read_field(j, key, cfg.lambda0);
    else if (key == "seed") read_field(j, key, cfg.seed);
    else if (key == "mc_samples") read_field(j, key, cfg.mc_samples);
    else if (key == "mc_blocks") read_field(j, key, cfg.mc_blocks);
    else if (key == "t_max") read_field(j, key, cfg.t_max);
    else if (key == "damping") read_field(j, key, cfg.damping);
    else if (key == "tol") read_field(j, key, cfg.tol);
    else if (key == "solver_tol") read_field(j, key, cfg.solver_tol);
    else if (key == "output") read_field(j, key, cfg.output);
    else if (key == "engine") read_field(j, key, cfg.engine);
    else if (key == "channel") read_field(j, key, cfg.channel);
    else if (key == "threads") read_field(j, key, cfg.threads);
    else if (key == "lambda_grid") read_field(j, key, cfg.lambda_grid);
    else if (key == "onsager") read_field(j, key, cfg.onsager);
    else if (key == "dump_data") read_field(j, key, cfg.dump_data);
    else if (key == "tolerance_scale") read_field(j, key, cfg.tolerance_scale);
    else if (key == "only_check") read_field(j, key, cfg.only_check);
    else if (key == "scratch_dir") read_field(j, key, cfg.scratch_dir);
    else throw InvalidInputError("unknown config field '" + key + "'");
    (void)value;
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidInputError("config parse error: " + std::string(e.what()));
  }
  ExperimentConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.K < 1 || cfg.K > kMaxK) {
    throw InvalidInputError("config field 'K' must be in [1, " +
                            std::to_string(kMaxK) + "]");
  }
  if (!(cfg.alpha > 0)) throw InvalidInputError("config field 'alpha' must be > 0");
  if (cfg.d < cfg.K) throw InvalidInputError("config field 'd' must be >= K");
  if (!(cfg.lambda0 >= 0)) throw InvalidInputError("config field 'lambda0' must be >= 0");
  if (cfg.mc_samples < 1) throw InvalidInputError("config field 'mc_samples' must be >= 1");
  if (cfg.mc_blocks < 1) throw InvalidInputError("config field 'mc_blocks' must be >= 1");
  if (cfg.t_max < 1) throw InvalidInputError("config field 't_max' must be >= 1");
  if (!(cfg.damping > 0 && cfg.damping <= 1)) {
    throw InvalidInputError("config field 'damping' must be in (0, 1]");
  }
  if (!(cfg.tol > 0)) throw InvalidInputError("config field 'tol' must be > 0");
  if (!(cfg.solver_tol > 0)) throw InvalidInputError("config field 'solver_tol' must be > 0");
  if (cfg.engine != "direct" && cfg.engine != "dice") {
    throw InvalidInputError("config field 'engine' must be direct|dice");
  }
  if (cfg.channel != "softmax" && cfg.channel != "gaussian") {
    throw InvalidInputError("config field 'channel' must be softmax|gaussian");
  }
  if (cfg.threads < 0) throw InvalidInputError("config field 'threads' must be >= 0");
  if (cfg.lambda_grid.empty()) {
    throw InvalidInputError("config field 'lambda_grid' must be non-empty");
  }
  for (double l : cfg.lambda_grid) {
    if (!(l >= 0)) throw InvalidInputError("config field 'lambda_grid' must be >= 0");
  }
  if (cfg.onsager != "fixed" && cfg.onsager != "se") {
    throw InvalidInputError("config field 'onsager' must be fixed|se");
  }
  if (!(cfg.tolerance_scale >= 0)) {
    throw InvalidInputError("config field 'tolerance_scale' must be >= 0");
  }
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  return json{{"K", cfg.K},
              {"alpha", cfg.alpha},
              {"d", cfg.d},
              {"lambda0", cfg.lambda0},
              {"seed", cfg.seed},
              {"mc_samples", cfg.mc_samples},
              {"mc_blocks", cfg.mc_blocks},
              {"t_max", cfg.t_max},
              {"damping", cfg.damping},
              {"tol", cfg.tol},
              {"solver_tol", cfg.solver_tol},
              {"output", cfg.output},
              {"engine", cfg.engine},
              {"channel", cfg.channel},
              {"threads", cfg.threads},
              {"lambda_grid", cfg.lambda_grid},
              {"onsager", cfg.onsager},
              {"dump_data", cfg.dump_data}};
}

std::string config_hash(const ExperimentConfig& cfg) {
  // thread count must not change the hash (outputs are thread-invariant)
  ExperimentConfig c = cfg;
  c.threads = 0;
  json j = to_json(c);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_header_line(const ExperimentConfig& cfg) {
  return std::string("# ampse ") + kVersion + " config=" + config_hash(cfg) + "\n";
}

namespace {

void append_mat_row_major(std::string& out, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out += ',';
      out += format_g17(m(i, j));
    }
  }
}

}  // namespace

std::string trajectory_csv(const AmpTrajectory& traj, const ExperimentConfig& cfg) {
  std::string out = csv_header_line(cfg);
  out += "t,omega_step_dist,gamma_step_dist,ratio,grad_norm";
  const int K = traj.K;
  for (int i = 1; i <= K; ++i) {
    for (int j = 1; j <= K; ++j) {
      out += ",B_" + std::to_string(i) + std::to_string(j);
    }
  }
  for (int i = 1; i <= K; ++i) {
    for (int j = 1; j <= K; ++j) {
      out += ",C_" + std::to_string(i) + std::to_string(j);
    }
  }
  out += "\n";
  for (const TrajPoint& pt : traj.points) {
    out += std::to_string(pt.t);
    out += ',';
    out += format_g17(pt.omega_step);
    out += ',';
    out += format_g17(pt.gamma_step);
    out += ',';
    out += format_g17(pt.ratio);
    out += ',';
    out += format_g17(pt.grad_norm);
    append_mat_row_major(out, pt.r0_overlap);
    append_mat_row_major(out, pt.psi_cov);
    out += '\n';
  }
  return out;
}

std::string fig1_csv(const std::vector<Fig1Row>& rows, const ExperimentConfig& cfg) {
  std::string out = csv_header_line(cfg);
  out += "lambda0,t,step_dist,ratio,rho_at_ref\n";
  for (const Fig1Row& r : rows) {
    out += format_g17(r.lambda0);
    out += ',' + std::to_string(r.t) + ',';
    out += format_g17(r.step_dist);
    out += ',';
    out += format_g17(r.ratio);
    out += ',';
    out += format_g17(r.rho_at_ref);
    out += '\n';
  }
  return out;
}

std::string se_rate_csv(const DeviationSequence& seq, double rho_at_ref,
                        const ExperimentConfig& cfg) {
  std::string out = csv_header_line(cfg);
  out += "t,delta_fro,ratio,rho_at_ref\n";
  for (std::size_t i = 0; i < seq.deltas.size(); ++i) {
    out += std::to_string(i + 1) + ',';
    out += format_g17(seq.deltas[i].norm());
    out += ',';
    out += format_g17(i < seq.ratios.size() ? seq.ratios[i]
                                            : std::numeric_limits<double>::quiet_NaN());
    out += ',';
    out += format_g17(rho_at_ref);
    out += '\n';
  }
  return out;
}

nlohmann::json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json fixed_point_json(const FixedPoint& fp, const ExperimentConfig& cfg) {
  json j;
  j["meta"] = {{"version", kVersion}, {"config", config_hash(cfg)}};
  j["K"] = fp.K;
  j["alpha"] = fp.alpha;
  j["lambda0"] = fp.lambda0;
  j["C0"] = mat_to_json(fp.C0);
  j["Bstar"] = mat_to_json(fp.Bstar);
  j["Cstar"] = mat_to_json(fp.Cstar);
  j["Vstar"] = mat_to_json(fp.Vstar);
  j["Qstar"] = mat_to_json(fp.Qstar);
  j["rho_at"] = fp.rho_at;
  j["residuals"] = {{"v_eq", fp.residuals.v_eq},
                    {"b_eq", fp.residuals.b_eq},
                    {"c_eq", fp.residuals.c_eq},
                    {"v_eq_se", fp.residuals.v_eq_se},
                    {"b_eq_se", fp.residuals.b_eq_se},
                    {"c_eq_se", fp.residuals.c_eq_se},
                    {"identity", fp.residuals.identity}};
  j["mc_samples"] = fp.mc_samples;
  j["seed"] = fp.seed;
  j["converged"] = fp.converged();
  j["sweeps"] = fp.sweeps;
  j["channel"] = fp.channel;
  return j;
}

nlohmann::json solve_report_json(const SolveReport& rep, const ExperimentConfig& cfg) {
  json j;
  j["meta"] = {{"version", kVersion}, {"config", config_hash(cfg)}};
  j["grad_norm"] = rep.grad_norm;
  j["iterations"] = rep.iterations;
  j["objective"] = rep.objective;
  j["method"] = rep.method;
  j["converged"] = rep.converged;
  j["d"] = rep.omega_star.rows();
  j["K"] = rep.omega_star.cols();
  return j;
}

nlohmann::json dice_summary_json(const AmpTrajectory& traj, const ExperimentConfig& cfg) {
  json j;
  j["meta"] = {{"version", kVersion}, {"config", config_hash(cfg)}};
  j["engine"] = traj.engine;
  j["K"] = traj.K;
  j["alpha"] = traj.alpha;
  j["lambda0"] = traj.lambda0;
  j["t_max"] = traj.points.size();
  j["peak_bytes"] = traj.peak_bytes;
  j["max_single_alloc"] = traj.max_single_alloc;
  return j;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot open output file '" + path + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw InvalidInputError("failed writing output file '" + path + "'");
}

// ---------------------------------------------------------------------------
// pipelines

namespace {

FixedPoint compute_fp(const ExperimentConfig& cfg, double lambda0) {
  McConfig mc{cfg.mc_samples, cfg.seed, cfg.mc_blocks, cfg.threads};
  SolveOptions so;
  so.damping = cfg.damping;
  so.tol = cfg.tol;
  return solve_fixed_point(cfg.K, cfg.alpha, lambda0, Mat::Identity(cfg.K, cfg.K),
                           cfg.channel, mc, so);
}

std::string default_output(const ExperimentConfig& cfg, const char* name) {
  return cfg.output.empty() ? std::string(name) : cfg.output;
}

}  // namespace

CmdResult cmd_fixed_point(const ExperimentConfig& cfg) {
  FixedPoint fp = compute_fp(cfg, cfg.lambda0);
  write_text_file(default_output(cfg, "fixed_point.json"),
                  fixed_point_json(fp, cfg).dump(2) + "\n");
  if (!fp.converged()) return {2, "fixed point did not converge: " + fp.message};
  return {0, "rho_at=" + format_g17(fp.rho_at)};
}

CmdResult cmd_rho_at(const ExperimentConfig& cfg, std::string* rho_out) {
  FixedPoint fp = compute_fp(cfg, cfg.lambda0);
  if (!cfg.output.empty()) {
    write_text_file(cfg.output, fixed_point_json(fp, cfg).dump(2) + "\n");
  }
  if (!fp.converged()) return {2, "fixed point did not converge: " + fp.message};
  if (rho_out != nullptr) *rho_out = format_g17(fp.rho_at);
  return {0, format_g17(fp.rho_at)};
}

CmdResult cmd_se_rate(const ExperimentConfig& cfg) {
  FixedPoint fp = compute_fp(cfg, cfg.lambda0);
  if (!fp.converged()) return {2, "fixed point did not converge: " + fp.message};
  McConfig mc{cfg.mc_samples, cfg.seed, cfg.mc_blocks, cfg.threads};
  DeviationSequence seq = deviation_sequence(fp, mc, cfg.t_max);
  write_text_file(default_output(cfg, "se_rate.csv"), se_rate_csv(seq, fp.rho_at, cfg));
  return {0, ""};
}

CmdResult cmd_amp(const ExperimentConfig& cfg) {
  FixedPoint fp = compute_fp(cfg, cfg.lambda0);
  if (!fp.converged()) return {2, "fixed point did not converge: " + fp.message};
  SplitRng rng(cfg.seed);
  GroundTruth gt = sample_ground_truth(cfg.d, cfg.K, rng);
  Dataset data = make_dataset(gt, cfg.alpha, fp.loss(), rng, cfg.threads);
  if (!cfg.dump_data.empty()) dump_instance(cfg.dump_data, gt.omega0, &data.X, &data.y);
  AmpOptions opts;
  opts.threads = cfg.threads;
  opts.se_schedule = cfg.onsager == "se";
  AmpRun run = amp_run(gt, data, fp, cfg.t_max, rng, opts);
  write_text_file(default_output(cfg, "amp_trajectory.csv"),
                  trajectory_csv(run.traj, cfg));
  return {0, ""};
}

CmdResult cmd_dice(const ExperimentConfig& cfg) {
  FixedPoint fp = compute_fp(cfg, cfg.lambda0);
  if (!fp.converged()) return {2, "fixed point did not converge: " + fp.message};
  SplitRng rng(cfg.seed);
  GroundTruth gt = sample_ground_truth(cfg.d, cfg.K, rng);
  DiceOptions opts;
  opts.threads = cfg.threads;
  AmpRun run = dice_run(gt, fp, cfg.t_max, rng, opts);
  const std::string path = default_output(cfg, "dice_trajectory.csv");
  write_text_file(path, trajectory_csv(run.traj, cfg));
  write_text_file(path + ".summary.json", dice_summary_json(run.traj, cfg).dump(2) + "\n");
  return {0, ""};
}

CmdResult cmd_solve(const ExperimentConfig& cfg) {
  SplitRng rng(cfg.seed);
  GroundTruth gt = sample_ground_truth(cfg.d, cfg.K, rng);
  const RowLoss& loss = loss_by_name(cfg.channel);
  Dataset data = make_dataset(gt, cfg.alpha, loss, rng, cfg.threads);
  SolverOptions so;
  so.tol = cfg.solver_tol;
  so.threads = cfg.threads;
  SolveReport rep = solve_ridge_softmax(data.X, data.y, cfg.lambda0, loss, so);
  write_text_file(default_output(cfg, "solve_report.json"),
                  solve_report_json(rep, cfg).dump(2) + "\n");
  if (!cfg.dump_data.empty()) dump_instance(cfg.dump_data, rep.omega_star, nullptr, nullptr);
  if (!rep.converged) return {2, "solver hit the iteration cap"};
  return {0, "grad_norm=" + format_g17(rep.grad_norm)};
}

CmdResult cmd_fig1(const ExperimentConfig& cfg) {
  std::vector<Fig1Row> rows;
  for (std::size_t li = 0; li < cfg.lambda_grid.size(); ++li) {
    const double lambda0 = cfg.lambda_grid[li];
    FixedPoint fp = compute_fp(cfg, lambda0);
    if (!fp.converged()) {
      return {2, "fixed point did not converge at lambda0=" + format_g17(lambda0)};
    }
    SplitRng rng(SplitRng(cfg.seed).split(li).stream_id());
    GroundTruth gt = sample_ground_truth(cfg.d, cfg.K, rng);
    AmpRun run;
    if (cfg.engine == "dice") {
      run = dice_run(gt, fp, cfg.t_max, rng, DiceOptions{cfg.threads, false, {}});
    } else {
      Dataset data = make_dataset(gt, cfg.alpha, fp.loss(), rng, cfg.threads);
      AmpOptions opts;
      opts.threads = cfg.threads;
      opts.compute_grad = false;
      run = amp_run(gt, data, fp, cfg.t_max, rng, opts);
    }
    for (const TrajPoint& pt : run.traj.points) {
      rows.push_back({lambda0, pt.t, pt.omega_step, pt.ratio, fp.rho_at});
    }
  }
  write_text_file(default_output(cfg, "fig1.csv"), fig1_csv(rows, cfg));
  return {0, ""};
}

}  // namespace ampse
