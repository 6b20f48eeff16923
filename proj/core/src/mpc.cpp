#include "cannarx/mpc.hpp"

#include <chrono>
#include <cmath>

namespace cannarx {

EquilibriumTriple find_equilibrium(const ModelParameters& p, const Eigen::VectorXd& yo_norm,
                                   double tol, int max_iters) {
  p.validate();
  if (yo_norm.size() != p.n_y) throw ValidationError("find_equilibrium: bad reference size");

  // Residual graph: u is the only unknown; the stacked state is H copies
  // of (yo, u).
  grad::Tape tape;
  const ParamLeaves consts = make_param_constants(tape, p);
  const auto u_id = tape.leaf(Eigen::MatrixXd::Zero(p.n_u, 1));
  const auto yo_id = tape.constant(yo_norm);
  grad::Tape::Id x_id = tape.concat(yo_id, u_id);
  for (int h = 1; h < p.H; ++h) x_id = tape.concat(x_id, tape.concat(yo_id, u_id));
  const auto res_id = tape.sub(record_eta(tape, consts, p, x_id, u_id), yo_id);
  std::vector<grad::Tape::Id> res_components;
  for (int i = 0; i < p.n_y; ++i) res_components.push_back(tape.slice(res_id, i, 1));

  auto eval_residual = [&](const Eigen::VectorXd& u) {
    tape.mutable_value(u_id).col(0) = u;
    tape.forward();
    return Eigen::VectorXd(tape.value(res_id).col(0));
  };
  auto jacobian = [&]() {
    Eigen::MatrixXd jac(p.n_y, p.n_u);
    for (int i = 0; i < p.n_y; ++i) {
      tape.backward(res_components[static_cast<std::size_t>(i)]);
      jac.row(i) = tape.adjoint(u_id).col(0).transpose();
    }
    return jac;
  };

  Eigen::VectorXd u = Eigen::VectorXd::Zero(p.n_u);
  Eigen::VectorXd r = eval_residual(u);
  double lambda = 1e-6;
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXd jac = jacobian();
    const Eigen::VectorXd grad = jac.transpose() * r;
    if (grad.norm() < tol) break;
    bool accepted = false;
    for (int damp = 0; damp < 20; ++damp) {
      const Eigen::MatrixXd h =
          jac.transpose() * jac + lambda * Eigen::MatrixXd::Identity(p.n_u, p.n_u);
      const Eigen::VectorXd delta = h.ldlt().solve(-grad);
      const Eigen::VectorXd u_try = (u + delta).cwiseMax(-1.0).cwiseMin(1.0);
      const Eigen::VectorXd r_try = eval_residual(u_try);
      if (r_try.squaredNorm() < r.squaredNorm()) {
        u = u_try;
        r = r_try;
        lambda = std::max(lambda * 0.25, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
    if (r.norm() < tol) break;
  }

  EquilibriumTriple eq;
  eq.u = u;
  eq.y = yo_norm;
  eq.x = RegressorState::constant(p.H, yo_norm, u);
  eq.residual = (eta(p, eq.x.x, u) - yo_norm).norm();
  return eq;
}

void FhocpConfig::validate(int n_u, int n_y) const {
  if (Np < 1) throw ValidationError("fhocp: Np must be at least 1");
  if (q_diag.size() != n_y || r_diag.size() != n_u)
    throw ValidationError("fhocp: weight diagonal size mismatch");
  if ((q_diag.array() <= 0.0).any() || (r_diag.array() <= 0.0).any())
    throw ValidationError("fhocp: weights must be positive definite");
  if (mu_terminal < 0.0 || state_penalty < 0.0)
    throw ValidationError("fhocp: penalties must be non-negative");
}

FhocpSolver::FhocpSolver(const ModelParameters& p, const FhocpConfig& config)
    : params_(p), config_(config) {
  params_.validate();
  config_.validate(p.n_u, p.n_y);
  const int nz = p.n_z();
  const int np = config_.Np;

  const ParamLeaves consts = make_param_constants(tape_, params_);
  x0_id_ = tape_.constant(Eigen::MatrixXd::Zero(p.n(), 1));
  u_eq_id_ = tape_.constant(Eigen::MatrixXd::Zero(p.n_u, 1));
  y_eq_id_ = tape_.constant(Eigen::MatrixXd::Zero(p.n_y, 1));
  x_eq_id_ = tape_.constant(Eigen::MatrixXd::Zero(p.n(), 1));
  const auto q_id = tape_.constant(config_.q_diag);
  const auto r_id = tape_.constant(config_.r_diag);

  auto weighted_sq = [&](grad::Tape::Id d, grad::Tape::Id w) {
    return tape_.dot(d, tape_.hadamard(d, w));
  };
  auto box_hinge = [&](grad::Tape::Id v) {
    const auto above = tape_.squared_norm(tape_.max_const(tape_.add_const(v, -1.0), 0.0));
    const auto below = tape_.squared_norm(tape_.min_const(tape_.add_const(v, 1.0), 0.0));
    return tape_.add(above, below);
  };

  grad::Tape::Id x = x0_id_;
  grad::Tape::Id cost = -1;
  auto add_term = [&](grad::Tape::Id term) {
    cost = cost < 0 ? term : tape_.add(cost, term);
  };
  for (int i = 0; i < np; ++i) {
    const auto u = tape_.leaf(Eigen::MatrixXd::Zero(p.n_u, 1));
    u_ids_.push_back(u);
    const auto y_i = tape_.slice(x, (p.H - 1) * nz, p.n_y);
    add_term(weighted_sq(tape_.sub(u, u_eq_id_), r_id));
    add_term(weighted_sq(tape_.sub(y_i, y_eq_id_), q_id));
    if (config_.state_penalty > 0.0 && i > 0)
      add_term(tape_.scale(box_hinge(x), config_.state_penalty));
    const auto eta_i = record_eta(tape_, consts, params_, x, u);
    x = record_state_advance(tape_, nz, x, eta_i, u);
  }
  terminal_id_ = tape_.squared_norm(tape_.sub(x, x_eq_id_));
  if (config_.state_penalty > 0.0)
    add_term(tape_.scale(box_hinge(x), config_.state_penalty));
  add_term(tape_.scale(terminal_id_, config_.mu_terminal));
  cost_id_ = cost;
}

void FhocpSolver::set_equilibrium(const EquilibriumTriple& eq) {
  tape_.mutable_value(u_eq_id_).col(0) = eq.u;
  tape_.mutable_value(y_eq_id_).col(0) = eq.y;
  tape_.mutable_value(x_eq_id_).col(0) = eq.x.x;
}

void FhocpSolver::load(const RegressorState& x0, const Eigen::MatrixXd& u_seq) {
  if (u_seq.rows() != config_.Np || u_seq.cols() != params_.n_u)
    throw ValidationError("fhocp: input sequence shape mismatch");
  tape_.mutable_value(x0_id_).col(0) = x0.x;
  for (int i = 0; i < config_.Np; ++i)
    tape_.mutable_value(u_ids_[static_cast<std::size_t>(i)]).col(0) =
        u_seq.row(i).transpose();
}

double FhocpSolver::cost_of(const RegressorState& x0, const Eigen::MatrixXd& u_seq) {
  load(x0, u_seq);
  tape_.forward();
  return tape_.scalar(cost_id_);
}

double FhocpSolver::terminal_gap(const RegressorState& x0, const Eigen::MatrixXd& u_seq) {
  load(x0, u_seq);
  tape_.forward();
  return std::sqrt(tape_.scalar(terminal_id_));
}

FhocpResult FhocpSolver::solve(const RegressorState& x0, const Eigen::MatrixXd& warm_start) {
  const int np = config_.Np;
  const int n_u = params_.n_u;
  Eigen::MatrixXd u = warm_start.cwiseMax(-1.0).cwiseMin(1.0);
  double cost = cost_of(x0, u);

  FhocpResult result;
  Eigen::MatrixXd grad(np, n_u);
  double step0 = 1.0;
  int it = 0;
  for (; it < config_.max_iters; ++it) {
    tape_.backward(cost_id_);
    for (int i = 0; i < np; ++i)
      grad.row(i) = tape_.adjoint(u_ids_[static_cast<std::size_t>(i)]).col(0).transpose();

    // Projected gradient with Armijo backtracking on the projected step.
    bool accepted = false;
    double alpha = step0;
    for (int bt = 0; bt < 40 && !accepted; ++bt) {
      const Eigen::MatrixXd u_try = (u - alpha * grad).cwiseMax(-1.0).cwiseMin(1.0);
      const double move2 = (u_try - u).squaredNorm();
      if (move2 == 0.0) break;
      const double cost_try = cost_of(x0, u_try);
      if (cost_try <= cost - 1e-4 / std::max(alpha, 1e-16) * move2) {
        const double move = std::sqrt(move2);
        u = u_try;
        cost = cost_try;
        accepted = true;
        step0 = std::min(alpha * 2.0, 1e3);
        if (move < config_.step_tol) {
          result.converged = true;
        }
      } else {
        alpha *= 0.5;
      }
    }
    if (!accepted) {
      // No descent direction within the box at machine step sizes.
      result.converged = true;
      cost = cost_of(x0, u);  // restore tape state for the accepted iterate
      break;
    }
    if (result.converged) break;
  }
  result.u_seq = u;
  result.cost = cost;
  result.iters = it + 1;
  return result;
}

LoopLog run_mpc_loop(LoopPlant& plant, const ModelParameters& params,
                     const FhocpConfig& fhocp, const ReferenceSchedule& schedule,
                     const RunConfig& config) {
  params.validate();
  const double tau_s = 1.0;
  FhocpSolver solver(params, fhocp);

  Eigen::VectorXd u_prev = config.u_init_norm.size() == params.n_u
                               ? config.u_init_norm
                               : Eigen::VectorXd::Zero(params.n_u);
  Eigen::VectorXd y_meas = plant.initial_output();
  RegressorState x_meas = RegressorState::constant(params.H, y_meas, u_prev);

  Eigen::MatrixXd warm = u_prev.transpose().replicate(fhocp.Np, 1);
  Eigen::VectorXd yo_prev;
  EquilibriumTriple eq;

  LoopLog log;
  log.reserve(static_cast<std::size_t>(config.duration));
  for (int k = 0; k < config.duration; ++k) {
    const double t = k * tau_s;
    const Eigen::VectorXd yo_raw = schedule.at(t);
    Eigen::VectorXd yo_norm(params.n_y);
    for (int i = 0; i < params.n_y; ++i)
      yo_norm[i] = params.y_scalers[static_cast<std::size_t>(i)].normalize(yo_raw[i]);

    const auto t0 = std::chrono::steady_clock::now();
    if (yo_prev.size() == 0 || (yo_norm - yo_prev).norm() > 0.0) {
      eq = find_equilibrium(params, yo_norm);
      solver.set_equilibrium(eq);
      warm = eq.u.transpose().replicate(fhocp.Np, 1);
      yo_prev = yo_norm;
    }
    const FhocpResult sol = solver.solve(x_meas, warm);
    const Eigen::VectorXd u = sol.u_seq.row(0).transpose();
    const auto t1 = std::chrono::steady_clock::now();

    warm.topRows(fhocp.Np - 1) = sol.u_seq.bottomRows(fhocp.Np - 1);
    warm.row(fhocp.Np - 1) = eq.u.transpose();

    LoopRecord rec;
    rec.k = k;
    rec.t = t;
    rec.yo = yo_raw;
    rec.r = yo_raw;  // no reference shaping in the MPC loop
    rec.y.resize(params.n_y);
    rec.yhat.resize(params.n_y);
    const Eigen::VectorXd yhat = x_meas.output();
    for (int i = 0; i < params.n_y; ++i) {
      const auto& s = params.y_scalers[static_cast<std::size_t>(i)];
      rec.y[i] = s.denormalize(y_meas[i]);
      rec.yhat[i] = s.denormalize(yhat[i]);
    }
    rec.u.resize(params.n_u);
    for (int i = 0; i < params.n_u; ++i)
      rec.u[i] = params.u_scalers[static_cast<std::size_t>(i)].denormalize(u[i]);
    rec.latency_us =
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count() / 1e3;
    rec.solver_iters = sol.iters;
    log.push_back(std::move(rec));

    y_meas = plant.apply(u);
    x_meas.advance(y_meas, u);
  }
  return log;
}

}  // namespace cannarx
