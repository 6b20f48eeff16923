#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cannarx/episode.hpp"
#include "cannarx/imc.hpp"
#include "cannarx/mpc.hpp"
#include "cannarx/stability.hpp"
#include "cannarx/trainer.hpp"

namespace cannarx {

/// Everything reproduce-all needs, with desk-scale defaults. All stages are
/// seeded from `seed`; reruns with an identical config produce byte-identical
/// deterministic artifacts (wall-clock timing files are kept separate).
struct PipelineConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out_dir = "out";

  // data generation
  int n_episodes = 8;
  int episode_steps = 2100;
  double dt = 1.0;
  double data_noise_sigma = 0.05;  // cm, rig-emulation measurement noise
  MprsConfig mprs;
  DatasetConfig dataset;

  // training
  CannarxArch arch;
  TrainConfig train;

  // closed loop
  int loop_duration = 600;
  double loop_noise_sigma = 0.05;  // cm, for the noise-sensitivity comparison
  int n_noise_seeds = 3;
  FhocpConfig fhocp;
  double tau_r = 12.0;
  double eps_tolerance = 1e-3;
  Assumption3Config assumption3;

  PipelineConfig();
};

PipelineConfig load_pipeline_config(const std::filesystem::path& json_path);

// --- stages ---

std::vector<Episode> gen_episodes(const PipelineConfig& config);
void write_episodes(const std::filesystem::path& dir, const std::vector<Episode>& episodes);
std::vector<Episode> read_episodes(const std::filesystem::path& dir);

/// Piecewise-constant reference built from exact plant equilibria, one
/// segment per voltage pair (always feasible for the true plant).
ReferenceSchedule make_default_schedule(const TankParams& params, double segment_s,
                                        const std::vector<TankInput>& setpoints);

void write_certificate_json(const std::filesystem::path& path, const Certificate& cert,
                            const ProbeReport& probe);

struct CompareReport {
  // Per channel, cm, each controller against its commanded trajectory (the
  // model reference for IMC, the setpoint for MPC) plus the raw-setpoint
  // view for both.
  Eigen::VectorXd imc_rmse, mpc_rmse;
  Eigen::VectorXd imc_rmse_setpoint, mpc_rmse_setpoint;
  double imc_latency_mean_us = 0, imc_latency_median_us = 0, imc_latency_p99_us = 0;
  double mpc_latency_mean_us = 0, mpc_latency_median_us = 0, mpc_latency_p99_us = 0;
  int imc_u_violations = 0, mpc_u_violations = 0;
  int imc_y_violations = 0, mpc_y_violations = 0;
};

Eigen::VectorXd tracking_rmse(const LoopLog& log);  // per channel vs r, raw units
Eigen::VectorXd setpoint_rmse(const LoopLog& log);  // per channel vs yo
/// Variance of the tracking error (y - r summed over channels) after the
/// initial transient; the noise-sensitivity metric.
double tracking_error_variance(const LoopLog& log, int skip);
CompareReport compare_loops(const LoopLog& imc, const LoopLog& mpc);
void write_compare_artifacts(const std::filesystem::path& report_dir,
                             const CompareReport& report);

struct ReproduceResult {
  std::filesystem::path out_dir;
  EvalReport fit_diss, fit_nodiss, fit_nnarx;
  Certificate cert_diss, cert_nodiss;
  double eps_star_diss = 0.0, eps_star_nodiss = 0.0;
  bool diss_certified_checkpoint = false;
  CompareReport comparison;
  std::vector<double> variance_diss, variance_nodiss;  // per noise seed
  std::string hashes;  // contents of the deterministic artifact index
};

/// gen-data -> train x{diss CA-NNARX, CA-NNARX, NNARX} -> certify ->
/// run-imc x{certified, uncertified} -> run-mpc -> compare.
ReproduceResult reproduce_all(const PipelineConfig& config);

/// FNV-1a index over the deterministic artifacts (timing files and loop
/// latency columns are excluded by construction).
std::string hash_deterministic_artifacts(const std::filesystem::path& out_dir);

}  // namespace cannarx
