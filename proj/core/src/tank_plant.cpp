#include "cannarx/tank_plant.hpp"

#include <cmath>

namespace cannarx {

void TankParams::validate() const {
  for (double a : a_out)
    if (a <= 0.0) throw ValidationError("tank params: outlet area must be positive");
  if (S <= 0.0 || kappa_a <= 0.0 || kappa_b <= 0.0 || g_grav <= 0.0)
    throw ValidationError("tank params: S, kappa, g must be positive");
  if (gamma_a <= 0.0 || gamma_a >= 1.0 || gamma_b <= 0.0 || gamma_b >= 1.0)
    throw ValidationError("tank params: gamma must lie in (0,1)");
}

namespace {

double outflow_head(double h, double g) {
  return std::sqrt(2.0 * g * (h > 0.0 ? h : 0.0));
}

}  // namespace

std::array<double, 4> rhs(const TankState& state, const TankInput& input,
                          const TankParams& p) {
  const double q_a = p.kappa_a * input.V_a;
  const double q_b = p.kappa_b * input.V_b;
  const double o1 = p.a_out[0] * outflow_head(state.h[0], p.g_grav);
  const double o2 = p.a_out[1] * outflow_head(state.h[1], p.g_grav);
  const double o3 = p.a_out[2] * outflow_head(state.h[2], p.g_grav);
  const double o4 = p.a_out[3] * outflow_head(state.h[3], p.g_grav);
  return {
      (-o1 + o3 + p.gamma_a * q_a) / p.S,
      (-o2 + o4 + p.gamma_b * q_b) / p.S,
      (-o3 + (1.0 - p.gamma_b) * q_b) / p.S,
      (-o4 + (1.0 - p.gamma_a) * q_a) / p.S,
  };
}

namespace {

TankState saturate(TankState s) {
  for (double& h : s.h) h = clamp(h, 0.0, kLevelMax);
  return s;
}

TankState rk4_substep(const TankState& s, const TankInput& u, double dt,
                      const TankParams& p) {
  const auto k1 = rhs(s, u, p);
  TankState s2;
  for (int i = 0; i < 4; ++i) s2.h[i] = s.h[i] + 0.5 * dt * k1[i];
  const auto k2 = rhs(s2, u, p);
  TankState s3;
  for (int i = 0; i < 4; ++i) s3.h[i] = s.h[i] + 0.5 * dt * k2[i];
  const auto k3 = rhs(s3, u, p);
  TankState s4;
  for (int i = 0; i < 4; ++i) s4.h[i] = s.h[i] + dt * k3[i];
  const auto k4 = rhs(s4, u, p);
  TankState out;
  for (int i = 0; i < 4; ++i)
    out.h[i] = s.h[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

}  // namespace

TankState step(const TankState& state, const TankInput& input, double dt,
               const TankParams& params, double dt_int) {
  if (dt <= 0.0) throw ValidationError("step: dt must be positive");
  if (dt_int <= 0.0) throw ValidationError("step: dt_int must be positive");
  TankState s = saturate(state);
  const int n_sub = std::max(1, static_cast<int>(std::ceil(dt / dt_int - 1e-12)));
  const double h = dt / n_sub;
  for (int i = 0; i < n_sub; ++i) s = saturate(rk4_substep(s, input, h, params));
  return s;
}

TankState equilibrium_levels(const TankInput& input, const TankParams& p) {
  const double q_a = p.kappa_a * input.V_a;
  const double q_b = p.kappa_b * input.V_b;
  auto head = [&p](double inflow, double a) {
    const double v = inflow / a;
    return v * v / (2.0 * p.g_grav);
  };
  TankState eq;
  eq.h[2] = head((1.0 - p.gamma_b) * q_b, p.a_out[2]);
  eq.h[3] = head((1.0 - p.gamma_a) * q_a, p.a_out[3]);
  eq.h[0] = head(p.gamma_a * q_a + (1.0 - p.gamma_b) * q_b, p.a_out[0]);
  eq.h[1] = head(p.gamma_b * q_b + (1.0 - p.gamma_a) * q_a, p.a_out[1]);
  return eq;
}

Eigen::MatrixXd gen_mprs(std::uint64_t seed, int duration, const MprsConfig& config) {
  if (duration <= 0) throw ValidationError("gen_mprs: duration must be positive");
  if (config.n_levels < 2) throw ValidationError("gen_mprs: need at least 2 levels");
  if (config.dwell_min <= 0 || config.dwell_max < config.dwell_min)
    throw ValidationError("gen_mprs: empty dwell range");
  if (config.bounds.empty()) throw ValidationError("gen_mprs: no channel bounds");

  const int n_ch = static_cast<int>(config.bounds.size());
  Eigen::MatrixXd u(duration, n_ch);
  for (int c = 0; c < n_ch; ++c) {
    const auto [lo, hi] = config.bounds[c];
    if (hi <= lo) throw ValidationError("gen_mprs: bounds must satisfy hi > lo");
    // Independent stream per channel so adding channels does not perturb
    // existing ones.
    Rng rng(seed + static_cast<std::uint64_t>(c) * 0x9e3779b97f4a7c15ull);
    const double step_size = (hi - lo) / (config.n_levels - 1);
    int level = uniform_int(rng, 0, config.n_levels - 1);
    int dwell = uniform_int(rng, config.dwell_min, config.dwell_max);
    for (int k = 0; k < duration; ++k) {
      if (dwell == 0) {
        int next = uniform_int(rng, 0, config.n_levels - 2);
        if (next >= level) ++next;  // switch to a different level
        level = next;
        dwell = uniform_int(rng, config.dwell_min, config.dwell_max);
      }
      u(k, c) = lo + step_size * level;
      --dwell;
    }
  }
  return u;
}

}  // namespace cannarx
