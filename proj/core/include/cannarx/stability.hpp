#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cannarx/grad.hpp"
#include "cannarx/model.hpp"

namespace cannarx {

/// Stability certificate: the residual nu of the small-gain condition
///   ||W0|| prod Lam_i ||W_i||  +  ||U0|| prod Lam~_j ||U_j||  <= 1/sqrt(H),
/// and, when nu < 0, Lyapunov decrease constants obtained from a Young
/// parameter search.
struct Certificate {
  double nu = 0.0;
  double f_norm_product = 0.0;  // ||W0|| prod Lam_i ||W_i||
  double g_norm_product = 0.0;  // ||U0|| prod Lam~_j ||U_j||
  std::vector<double> f_norms;  // per-matrix spectral norms, W0 first
  std::vector<double> g_norms;  // U0 first
  int H = 0;
  bool certified = false;
  double alpha_x = 0.0;  // valid only when certified
  double alpha_u = 0.0;
  double q = 0.0;        // Young parameter attaining alpha_x
};

/// nu via exact SVD (the authoritative offline route).
double diss_residual(const ModelParameters& p);
/// nu via power iteration (the training-time route).
double diss_residual_power(const ModelParameters& p, int max_iters = 200, double tol = 1e-12);

/// The analogous small-gain residual for the plain NNARX baseline: the
/// whole regression chain is one Lipschitz path over [x; u], so
///   nu = prod_i Lam_i ||W_i||_2 - 1/sqrt(H).
double diss_residual(const NnarxParameters& p);
double diss_residual_power(const NnarxParameters& p, int max_iters = 200, double tol = 1e-12);

/// Piecewise-linear penalty steering nu to slightly negative values:
///   rho = pi_plus [max(nu,-eps)+eps] + pi_minus [min(nu,-eps)+eps].
double regularizer(double nu, double pi_plus = 0.035, double pi_minus = 1e-4,
                   double eps_clearance = 0.02);

struct QSearch {
  double q_min = 0.1;
  double q_max = 1e3;
  int points = 200;
};

Certificate certify(const ModelParameters& p, const QSearch& search = {});

/// Empirical check of the Lyapunov decrease
///   DV <= -alpha_x ||Dx||^2 + alpha_u ||Du||^2
/// with V(xa, xb) = (xa-xb)' P (xa-xb), P = diag(I, 2I, ..., HI), on random
/// state/input pairs drawn from the normalized boxes.
struct ProbeReport {
  int n_samples = 0;
  int violations = 0;        // margin beyond 1e-9
  double max_violation = 0.0;  // max DV - bound (negative when slack)
  bool bound_checked = false;  // false in report-only mode (not certified)
};

ProbeReport lyapunov_probe(const ModelParameters& p, const Certificate& cert,
                           int n_samples, std::uint64_t seed, double tolerance = 1e-9);

/// V(xa, xb) with the probe's P matrix.
double lyapunov_value(int H, int n_z, const Eigen::VectorXd& xa, const Eigen::VectorXd& xb);

/// Gap ||x_a,k - x_b,k|| of two rollouts from random initial states driven
/// by one shared random input sequence; the deltaISS contraction probe.
Eigen::VectorXd trajectory_gap(const ModelParameters& p, int steps, std::uint64_t seed);

// Tape recordings of nu and rho for use inside training losses. Spectral
// norms run `spectral_iters` power steps with warm start across replays.
grad::Tape::Id record_diss_residual(grad::Tape& tape, const ParamLeaves& leaves,
                                    const ModelParameters& p, int spectral_iters = 50);
grad::Tape::Id record_diss_residual(grad::Tape& tape, const ParamLeaves& leaves,
                                    const NnarxParameters& p, int spectral_iters = 50);
grad::Tape::Id record_regularizer(grad::Tape& tape, grad::Tape::Id nu, double pi_plus,
                                  double pi_minus, double eps_clearance);

}  // namespace cannarx
