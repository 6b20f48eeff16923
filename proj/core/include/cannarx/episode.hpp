#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cannarx/tank_plant.hpp"

namespace cannarx {

/// Per-channel (min, max) pair mapping raw units onto [-1, 1].
struct Scaler {
  double min = -1.0;
  double max = 1.0;

  double normalize(double raw) const { return 2.0 * (raw - min) / (max - min) - 1.0; }
  double denormalize(double norm) const { return min + (norm + 1.0) * 0.5 * (max - min); }
};

void validate_scalers(const std::vector<Scaler>& scalers);  // max > min

/// One recorded experiment: raw-unit input/output series plus the scalers
/// assigned when the episode joined a dataset.
struct Episode {
  double dt = 1.0;
  Eigen::VectorXd t;
  Eigen::MatrixXd u;  // T x n_u, raw units
  Eigen::MatrixXd y;  // T x n_y, raw units
  std::vector<Scaler> u_scalers, y_scalers;  // may be empty until assigned
  std::string meta_json;  // generation config carried into the sidecar

  int length() const { return static_cast<int>(u.rows()); }
  void validate() const;
};

// Episode files: "<stem>.csv" with header t,u1,u2,y1,...  plus a
// "<stem>.json" sidecar holding dt, scalers, and generation config.
void save_episode(const std::filesystem::path& csv_path, const Episode& episode);
Episode load_episode(const std::filesystem::path& csv_path);

/// Simulate the tank plant under an input series; y is sampled once per
/// input row. Starts from `x0` (defaults to the equilibrium of the first
/// input sample when omitted).
Episode simulate_episode(const Eigen::MatrixXd& u, double dt, const TankParams& params,
                         const TankState* x0 = nullptr);

/// Add i.i.d. Gaussian noise to the outputs only, truncated so levels stay
/// in [0, 25].
Episode add_output_noise(const Episode& episode, const Eigen::VectorXd& sigma,
                         std::uint64_t seed);

struct Subsequence {
  Eigen::MatrixXd u;  // T_sub x n_u, normalized
  Eigen::MatrixXd y;  // T_sub x n_y, normalized
};

struct DatasetConfig {
  int T_sub = 150;
  int n_train = 512;  // subsequence counts
  int n_val = 128;
  int n_test_episodes = 1;
  int n_val_episodes = 1;
};

/// Train/val subsequences come from disjoint episode sets; the final
/// episode(s) are held out whole for testing. All channels are normalized
/// with scalers computed from the training episodes only.
struct Dataset {
  std::vector<Subsequence> train, val;
  std::vector<Episode> test;  // raw units, scalers assigned
  std::vector<Scaler> u_scalers, y_scalers;

  Eigen::MatrixXd normalize_u(const Eigen::MatrixXd& raw) const;
  Eigen::MatrixXd normalize_y(const Eigen::MatrixXd& raw) const;
};

Dataset make_dataset(const std::vector<Episode>& episodes, const DatasetConfig& config);

Eigen::MatrixXd normalize_columns(const Eigen::MatrixXd& raw, const std::vector<Scaler>& s,
                                  bool clamp_unit);
Eigen::MatrixXd denormalize_columns(const Eigen::MatrixXd& norm, const std::vector<Scaler>& s);

}  // namespace cannarx
