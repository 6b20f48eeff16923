#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cannarx/model.hpp"
#include "cannarx/tank_plant.hpp"

namespace cannarx {

/// First-order low-pass with unity static gain, discretized by exact
/// zero-order hold: a = exp(-tau_s / tau_r).
struct LowPassFilter {
  double a = 0.0;
  Eigen::VectorXd state;

  static LowPassFilter from_time_constant(double tau_r, double tau_s, int n);
  void reset(const Eigen::VectorXd& v) { state = v; }
  Eigen::VectorXd step(const Eigen::VectorXd& input);
};

struct Assumption3Config {
  int n_screen = 1000000;
  int n_starts = 512;
  int descent_iters = 100;
  std::uint64_t seed = 0;
};

/// min_x |[g(x)]_j| over the normalized state box, per input channel.
struct Assumption3Report {
  double eps_star = 0.0;
  Eigen::VectorXd per_channel;
  Eigen::MatrixXd argmin;  // one column per channel

  bool satisfied(double tolerance) const { return eps_star > tolerance; }
};

Assumption3Report verify_assumption3(const ModelParameters& p,
                                     const Assumption3Config& config = {});

/// Explicit inverse law
///   u = Sat( diag(g(x))^-1 [ U0^+ (r - W0 f(x)) ] )
/// with the Moore-Penrose inverse U0^+ and the unit-box saturation.
Eigen::VectorXd imc_control(const ModelParameters& p, const Eigen::MatrixXd& u0_pinv,
                            const Eigen::VectorXd& x, const Eigen::VectorXd& r);

Eigen::MatrixXd moore_penrose(const Eigen::MatrixXd& m);

struct ImcConfig {
  double tau_r = 12.0;  // s, both filters
  double tau_s = 1.0;   // s
  double eps_tolerance = 1e-3;
};

/// Parallel-model IMC: the internal model advances on its own predictions;
/// only the filtered model error is fed back.
class ImcController {
 public:
  /// Throws ValidationError if the supplied eps_star fails the tolerance.
  ImcController(ModelParameters params, const ImcConfig& config, double eps_star);

  void initialize(const Eigen::VectorXd& y0_norm, const Eigen::VectorXd& u0_norm);

  struct Step {
    Eigen::VectorXd u;        // applied input, normalized
    Eigen::VectorXd r;        // inverse-law target, F_r(yo) - filtered error
    Eigen::VectorXd r_model;  // model-reference trajectory F_r(yo), the
                              // commanded closed-loop response
    Eigen::VectorXd yhat;     // internal-model output at this step
  };
  Step step(const Eigen::VectorXd& y_meas_norm, const Eigen::VectorXd& yo_norm);

  const ModelParameters& params() const { return params_; }
  const RegressorState& model_state() const { return state_; }

 private:
  ModelParameters params_;
  ImcConfig config_;
  Eigen::MatrixXd u0_pinv_;
  RegressorState state_;
  LowPassFilter f_r_, f_m_;
};

/// Piecewise-constant reference in raw units; value holds from each
/// breakpoint until the next.
struct ReferenceSchedule {
  Eigen::VectorXd t;
  Eigen::MatrixXd y_ref;

  Eigen::VectorXd at(double time) const;
};

void save_reference(const std::filesystem::path& path, const ReferenceSchedule& schedule);
ReferenceSchedule load_reference(const std::filesystem::path& path);

struct LoopRecord {
  int k = 0;
  double t = 0.0;
  Eigen::VectorXd yo, r, u, y, yhat;  // raw units
  double latency_us = 0.0;
  int solver_iters = 0;  // receding-horizon controllers only
};
using LoopLog = std::vector<LoopRecord>;

void write_loop_csv(const std::filesystem::path& path, const LoopLog& log);
LoopLog read_loop_csv(const std::filesystem::path& path);

/// Plant seen by a closed-loop runner: normalized inputs in, normalized
/// measured outputs back.
class LoopPlant {
 public:
  virtual ~LoopPlant() = default;
  virtual Eigen::VectorXd initial_output() = 0;
  virtual Eigen::VectorXd apply(const Eigen::VectorXd& u_norm) = 0;
};

/// Ground-truth tank simulator with optional measurement noise (truncated
/// so measured levels stay in [0, 25] cm).
class TankLoopPlant : public LoopPlant {
 public:
  TankLoopPlant(const TankParams& params, const TankState& x0, double dt,
                std::vector<Scaler> u_scalers, std::vector<Scaler> y_scalers,
                double noise_sigma_cm = 0.0, std::uint64_t noise_seed = 0);
  Eigen::VectorXd initial_output() override;
  Eigen::VectorXd apply(const Eigen::VectorXd& u_norm) override;
  const TankState& state() const { return state_; }

 private:
  Eigen::VectorXd measure();
  TankParams params_;
  TankState state_;
  double dt_;
  std::vector<Scaler> u_scalers_, y_scalers_;
  double sigma_;
  Rng rng_;
};

/// The trained model run as the plant (nominal-case analysis), with
/// optional additive output disturbance in normalized units.
class ModelLoopPlant : public LoopPlant {
 public:
  ModelLoopPlant(ModelParameters params, const RegressorState& chi0,
                 double noise_sigma = 0.0, std::uint64_t noise_seed = 0);
  Eigen::VectorXd initial_output() override;
  Eigen::VectorXd apply(const Eigen::VectorXd& u_norm) override;

 private:
  ModelParameters params_;
  RegressorState chi_;
  double sigma_;
  Rng rng_;
};

struct RunConfig {
  int duration = 600;  // steps
  Eigen::VectorXd u_init_norm;  // initial input history; zeros when empty
};

LoopLog run_imc_loop(LoopPlant& plant, ImcController& controller,
                     const ReferenceSchedule& schedule, const RunConfig& config);

}  // namespace cannarx
