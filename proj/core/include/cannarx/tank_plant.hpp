#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "cannarx/common.hpp"

namespace cannarx {

/// Nominal quadruple-tank parameters (outlet areas, cross section, flow
/// splits, pump gains, gravity). Units: cm, s, V.
struct TankParams {
  std::array<double, 4> a_out{0.1781, 0.1781, 0.1781, 0.1781};  // cm^2
  double S = 15.5179;                                           // cm^2
  double gamma_a = 0.36;
  double gamma_b = 0.36;
  double kappa_a = 3.3;  // cm^3/(V s)
  double kappa_b = 3.3;  // cm^3/(V s)
  double g_grav = 981.0;  // cm/s^2

  void validate() const;  // throws ValidationError
};

struct TankState {
  std::array<double, 4> h{0.0, 0.0, 0.0, 0.0};  // water levels, cm
};

struct TankInput {
  double V_a = 0.0;  // pump voltages, V
  double V_b = 0.0;
};

inline constexpr double kLevelMax = 25.0;   // cm
inline constexpr double kVoltageMax = 15.0;  // V

/// Level derivatives. Radicands are clamped at zero: an empty tank has no
/// outflow.
std::array<double, 4> rhs(const TankState& state, const TankInput& input,
                          const TankParams& params);

/// Advance one sampling period with fixed-step RK4 (internal substep
/// dt_int), saturating levels into [0, 25] after every substep.
TankState step(const TankState& state, const TankInput& input, double dt,
               const TankParams& params = {}, double dt_int = 0.1);

/// Closed-form head-balance equilibrium for constant pump voltages.
TankState equilibrium_levels(const TankInput& input, const TankParams& params = {});

/// Multilevel pseudo-random excitation signal. Each channel independently
/// holds a level for a uniformly drawn dwell time, then switches to a
/// different level drawn uniformly from the remaining equispaced values.
struct MprsConfig {
  int n_levels = 7;
  int dwell_min = 30;   // steps
  int dwell_max = 120;  // steps
  std::vector<std::pair<double, double>> bounds;  // per channel (lo, hi)
};

Eigen::MatrixXd gen_mprs(std::uint64_t seed, int duration, const MprsConfig& config);

}  // namespace cannarx
