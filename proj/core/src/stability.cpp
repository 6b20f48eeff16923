#include "cannarx/stability.hpp"

#include <cmath>

namespace cannarx {

namespace {

double svd_norm(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

using NormFn = double (*)(const Eigen::MatrixXd&);

void norm_chains(const ModelParameters& p, NormFn norm, Certificate& cert) {
  cert.f_norms.clear();
  cert.g_norms.clear();
  cert.f_norms.push_back(norm(p.W0));
  cert.f_norm_product = cert.f_norms[0];
  for (const auto& l : p.f_layers) {
    const double s = norm(l.W);
    cert.f_norms.push_back(s);
    cert.f_norm_product *= activation_lipschitz(l.act) * s;
  }
  cert.g_norms.push_back(norm(p.U0));
  cert.g_norm_product = cert.g_norms[0];
  for (const auto& l : p.g_layers) {
    const double s = norm(l.W);
    cert.g_norms.push_back(s);
    cert.g_norm_product *= activation_lipschitz(l.act) * s;
  }
}

}  // namespace

double diss_residual(const ModelParameters& p) {
  p.validate();
  Certificate cert;
  norm_chains(p, svd_norm, cert);
  return cert.f_norm_product + cert.g_norm_product - 1.0 / std::sqrt(static_cast<double>(p.H));
}

double diss_residual_power(const ModelParameters& p, int max_iters, double tol) {
  p.validate();
  double f_prod = grad::power_spectral_norm(p.W0, max_iters, tol).sigma;
  for (const auto& l : p.f_layers)
    f_prod *= activation_lipschitz(l.act) * grad::power_spectral_norm(l.W, max_iters, tol).sigma;
  double g_prod = grad::power_spectral_norm(p.U0, max_iters, tol).sigma;
  for (const auto& l : p.g_layers)
    g_prod *= activation_lipschitz(l.act) * grad::power_spectral_norm(l.W, max_iters, tol).sigma;
  return f_prod + g_prod - 1.0 / std::sqrt(static_cast<double>(p.H));
}

double diss_residual(const NnarxParameters& p) {
  p.validate();
  double prod = 1.0;
  for (const auto& l : p.layers) prod *= activation_lipschitz(l.act) * svd_norm(l.W);
  return prod - 1.0 / std::sqrt(static_cast<double>(p.H));
}

double diss_residual_power(const NnarxParameters& p, int max_iters, double tol) {
  p.validate();
  double prod = 1.0;
  for (const auto& l : p.layers)
    prod *= activation_lipschitz(l.act) * grad::power_spectral_norm(l.W, max_iters, tol).sigma;
  return prod - 1.0 / std::sqrt(static_cast<double>(p.H));
}

double regularizer(double nu, double pi_plus, double pi_minus, double eps_clearance) {
  if (!(pi_plus > pi_minus && pi_minus > 0.0))
    throw ValidationError("regularizer: requires pi_plus > pi_minus > 0");
  if (eps_clearance <= 0.0) throw ValidationError("regularizer: eps must be positive");
  return pi_plus * (std::max(nu, -eps_clearance) + eps_clearance) +
         pi_minus * (std::min(nu, -eps_clearance) + eps_clearance);
}

Certificate certify(const ModelParameters& p, const QSearch& search) {
  p.validate();
  Certificate cert;
  cert.H = p.H;
  norm_chains(p, svd_norm, cert);
  const double s_total = cert.f_norm_product + cert.g_norm_product;
  cert.nu = s_total - 1.0 / std::sqrt(static_cast<double>(p.H));
  cert.certified = cert.nu < 0.0;
  if (!cert.certified) return cert;

  const double u0_norm = cert.g_norms[0];
  const double h = static_cast<double>(p.H);
  double best_ax = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < search.points; ++i) {
    const double t = search.points == 1 ? 0.0
                                        : static_cast<double>(i) / (search.points - 1);
    const double q = search.q_min * std::pow(search.q_max / search.q_min, t);
    const double ax = 1.0 - h * (1.0 + 1.0 / (q * q)) * s_total * s_total;
    if (ax > best_ax) {
      best_ax = ax;
      cert.q = q;
      cert.alpha_x = ax;
      cert.alpha_u = h * (1.0 + u0_norm * u0_norm * (1.0 + q * q));
    }
  }
  return cert;
}

double lyapunov_value(int H, int n_z, const Eigen::VectorXd& xa, const Eigen::VectorXd& xb) {
  double v = 0.0;
  for (int h = 0; h < H; ++h)
    v += (h + 1) * (xa.segment(h * n_z, n_z) - xb.segment(h * n_z, n_z)).squaredNorm();
  return v;
}

ProbeReport lyapunov_probe(const ModelParameters& p, const Certificate& cert,
                           int n_samples, std::uint64_t seed, double tolerance) {
  p.validate();
  ProbeReport report;
  report.n_samples = n_samples;
  report.bound_checked = cert.certified;
  report.max_violation = -std::numeric_limits<double>::infinity();
  Rng rng(seed);
  const int n = p.n();
  for (int s = 0; s < n_samples; ++s) {
    const Eigen::VectorXd xa = uniform_vector(rng, n, -1.0, 1.0);
    const Eigen::VectorXd xb = uniform_vector(rng, n, -1.0, 1.0);
    const Eigen::VectorXd ua = uniform_vector(rng, p.n_u, -1.0, 1.0);
    const Eigen::VectorXd ub = uniform_vector(rng, p.n_u, -1.0, 1.0);

    RegressorState sa, sb;
    sa.H = sb.H = p.H;
    sa.n_u = sb.n_u = p.n_u;
    sa.n_y = sb.n_y = p.n_y;
    sa.x = xa;
    sb.x = xb;
    predict_and_advance(p, sa, ua);
    predict_and_advance(p, sb, ub);

    const double v0 = lyapunov_value(p.H, p.n_z(), xa, xb);
    const double v1 = lyapunov_value(p.H, p.n_z(), sa.x, sb.x);
    const double dv = v1 - v0;
    if (!cert.certified) {
      report.max_violation = std::max(report.max_violation, dv);
      continue;
    }
    const double bound = -cert.alpha_x * (xa - xb).squaredNorm() +
                         cert.alpha_u * (ua - ub).squaredNorm();
    const double margin = dv - bound;
    report.max_violation = std::max(report.max_violation, margin);
    if (margin > tolerance) ++report.violations;
  }
  return report;
}

Eigen::VectorXd trajectory_gap(const ModelParameters& p, int steps, std::uint64_t seed) {
  p.validate();
  Rng rng(seed);
  RegressorState sa = RegressorState::zero(p.H, p.n_u, p.n_y);
  RegressorState sb = sa;
  sa.x = uniform_vector(rng, p.n(), -1.0, 1.0);
  sb.x = uniform_vector(rng, p.n(), -1.0, 1.0);
  Eigen::VectorXd gap(steps + 1);
  gap[0] = (sa.x - sb.x).norm();
  for (int k = 0; k < steps; ++k) {
    const Eigen::VectorXd u = uniform_vector(rng, p.n_u, -1.0, 1.0);
    predict_and_advance(p, sa, u);
    predict_and_advance(p, sb, u);
    gap[k + 1] = (sa.x - sb.x).norm();
  }
  return gap;
}

grad::Tape::Id record_diss_residual(grad::Tape& tape, const ParamLeaves& leaves,
                                    const ModelParameters& p, int spectral_iters) {
  const std::size_t f_count = p.f_layers.size();
  const std::size_t g_count = p.g_layers.size();
  const auto w0_id = leaves.ids[leaves.ids.size() - 2];
  const auto u0_id = leaves.ids[leaves.ids.size() - 1];

  auto f_prod = tape.spectral_norm(w0_id, spectral_iters);
  for (std::size_t i = 0; i < f_count; ++i) {
    auto s = tape.spectral_norm(leaves.ids[2 * i], spectral_iters);
    const double lam = activation_lipschitz(p.f_layers[i].act);
    f_prod = tape.hadamard(f_prod, lam == 1.0 ? s : tape.scale(s, lam));
  }
  auto g_prod = tape.spectral_norm(u0_id, spectral_iters);
  for (std::size_t j = 0; j < g_count; ++j) {
    auto s = tape.spectral_norm(leaves.ids[2 * (f_count + j)], spectral_iters);
    const double lam = activation_lipschitz(p.g_layers[j].act);
    g_prod = tape.hadamard(g_prod, lam == 1.0 ? s : tape.scale(s, lam));
  }
  return tape.add_const(tape.add(f_prod, g_prod),
                        -1.0 / std::sqrt(static_cast<double>(p.H)));
}

grad::Tape::Id record_diss_residual(grad::Tape& tape, const ParamLeaves& leaves,
                                    const NnarxParameters& p, int spectral_iters) {
  grad::Tape::Id prod = -1;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto s = tape.spectral_norm(leaves.ids[2 * i], spectral_iters);
    const double lam = activation_lipschitz(p.layers[i].act);
    if (lam != 1.0) s = tape.scale(s, lam);
    prod = prod < 0 ? s : tape.hadamard(prod, s);
  }
  return tape.add_const(prod, -1.0 / std::sqrt(static_cast<double>(p.H)));
}

grad::Tape::Id record_regularizer(grad::Tape& tape, grad::Tape::Id nu, double pi_plus,
                                  double pi_minus, double eps_clearance) {
  if (!(pi_plus > pi_minus && pi_minus > 0.0) || eps_clearance <= 0.0)
    throw ValidationError("record_regularizer: bad weights");
  const auto above = tape.scale(tape.add_const(tape.max_const(nu, -eps_clearance), eps_clearance), pi_plus);
  const auto below = tape.scale(tape.add_const(tape.min_const(nu, -eps_clearance), eps_clearance), pi_minus);
  return tape.add(above, below);
}

}  // namespace cannarx
