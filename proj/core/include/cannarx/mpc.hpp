#pragma once

#include <Eigen/Dense>
#include <memory>

#include "cannarx/imc.hpp"
#include "cannarx/model.hpp"

namespace cannarx {

struct EquilibriumTriple {
  RegressorState x;      // H-fold stack of (y, u)
  Eigen::VectorXd u, y;  // normalized units
  double residual = 0.0;  // ||eta(x, u) - y||

  bool feasible(double tolerance) const { return residual <= tolerance; }
};

/// Solve eta(x(u), u) = y for the steady input by damped Gauss-Newton with
/// box projection, exploiting that the NARX equilibrium state is fully
/// determined by (y, u). With more outputs than inputs this is the
/// least-squares steady input; the residual is reported either way.
EquilibriumTriple find_equilibrium(const ModelParameters& p, const Eigen::VectorXd& yo_norm,
                                   double tol = 1e-10, int max_iters = 100);

struct FhocpConfig {
  int Np = 10;
  Eigen::VectorXd q_diag{{5.0, 5.0, 5.0, 5.0}};
  Eigen::VectorXd r_diag{{0.1, 0.1}};
  double mu_terminal = 1e3;    // quadratic relaxation of the zero-terminal constraint
  double state_penalty = 1e3;  // quadratic hinge outside the normalized state box
  int max_iters = 200;
  double step_tol = 1e-8;

  void validate(int n_u, int n_y) const;
};

struct FhocpResult {
  Eigen::MatrixXd u_seq;  // Np x n_u
  double cost = 0.0;
  int iters = 0;
  bool converged = false;
};

/// Direct single shooting: the input sequence is the decision variable,
/// input boxes handled by projection, the state box and the terminal
/// equality by quadratic penalties. Projected gradient with Armijo
/// backtracking; the cost graph is recorded once and replayed.
class FhocpSolver {
 public:
  FhocpSolver(const ModelParameters& p, const FhocpConfig& config);

  void set_equilibrium(const EquilibriumTriple& eq);
  FhocpResult solve(const RegressorState& x0, const Eigen::MatrixXd& warm_start);
  /// Cost of a fixed input sequence from a given state (no optimization).
  double cost_of(const RegressorState& x0, const Eigen::MatrixXd& u_seq);
  /// Terminal state distance ||x_Np - x_eq|| for a given input sequence.
  double terminal_gap(const RegressorState& x0, const Eigen::MatrixXd& u_seq);

  const FhocpConfig& config() const { return config_; }

 private:
  void load(const RegressorState& x0, const Eigen::MatrixXd& u_seq);

  ModelParameters params_;
  FhocpConfig config_;
  grad::Tape tape_;
  grad::Tape::Id x0_id_ = -1;
  std::vector<grad::Tape::Id> u_ids_;
  grad::Tape::Id u_eq_id_ = -1, y_eq_id_ = -1, x_eq_id_ = -1;
  grad::Tape::Id cost_id_ = -1, terminal_id_ = -1;
};

/// Receding horizon: solve, apply the first move, shift the warm start.
/// The NARX state is rebuilt from measured plant I/O at every step; the
/// equilibrium is recomputed whenever the reference value changes.
LoopLog run_mpc_loop(LoopPlant& plant, const ModelParameters& params,
                     const FhocpConfig& fhocp, const ReferenceSchedule& schedule,
                     const RunConfig& config);

}  // namespace cannarx
