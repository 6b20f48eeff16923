#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cannarx/episode.hpp"
#include "cannarx/grad.hpp"

namespace cannarx {

enum class Activation { kTanh, kSigmoid, kIdentity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);
double activation_lipschitz(Activation a);  // tanh 1, sigmoid 1/4, identity 1
Eigen::VectorXd apply_activation(Activation a, const Eigen::VectorXd& v);

struct DenseLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  Activation act = Activation::kTanh;
};

struct TrainingMeta {
  double nu_residual = 0.0;
  int epochs = 0;
  std::uint64_t seed = 0;
};

/// All learnable weights of the control-affine regressor
///   eta(x, u) = W0 f(x) + U0 (g(x) (x) u)
/// plus the structural metadata needed to rebuild and certify it.
struct ModelParameters {
  int schema_version = 1;
  int H = 5;
  int n_u = 2;
  int n_y = 4;
  std::vector<DenseLayer> f_layers;
  std::vector<DenseLayer> g_layers;
  Eigen::MatrixXd W0;
  Eigen::MatrixXd U0;
  std::vector<Scaler> u_scalers, y_scalers;
  TrainingMeta meta;

  int n_z() const { return n_u + n_y; }
  int n() const { return H * n_z(); }
  void validate() const;  // dimension chaining, activation constraints
};

/// Plain NNARX baseline: one feed-forward regressor over [x; u] with a
/// linear output layer, at a parameter count matched to a CA-NNARX.
struct NnarxParameters {
  int schema_version = 1;
  int H = 5;
  int n_u = 2;
  int n_y = 4;
  std::vector<DenseLayer> layers;  // last layer kIdentity, rows == n_y
  std::vector<Scaler> u_scalers, y_scalers;
  TrainingMeta meta;

  int n_z() const { return n_u + n_y; }
  int n() const { return H * n_z(); }
  void validate() const;
};

/// NARX shift-register state: H stacked (y, u) pairs in normalized units,
/// oldest first. x = [z_1' ... z_H']' with z_h = [y'; u']'.
struct RegressorState {
  int H = 0, n_u = 0, n_y = 0;
  Eigen::VectorXd x;

  static RegressorState zero(int H, int n_u, int n_y);
  static RegressorState constant(int H, const Eigen::VectorXd& y, const Eigen::VectorXd& u);

  int n_z() const { return n_u + n_y; }
  Eigen::VectorXd output() const;  // newest stored y (the C x read-out)
  void advance(const Eigen::VectorXd& y_next, const Eigen::VectorXd& u_now);
};

Eigen::VectorXd eval_f(const ModelParameters& p, const Eigen::VectorXd& x);
Eigen::VectorXd eval_g(const ModelParameters& p, const Eigen::VectorXd& x);
Eigen::VectorXd eta(const ModelParameters& p, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& u);

/// One-step prediction followed by the register shift; returns the
/// predicted output fed into the state.
Eigen::VectorXd predict_and_advance(const ModelParameters& p, RegressorState& state,
                                    const Eigen::VectorXd& u);
Eigen::VectorXd eval_nnarx(const NnarxParameters& p, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& u);
Eigen::VectorXd predict_and_advance(const NnarxParameters& p, RegressorState& state,
                                    const Eigen::VectorXd& u);

/// Recursive simulation: predicted outputs are fed back into the regressor.
/// Row k of the result aligns with row k of u_seq; row 0 is the read-out of
/// x0 (no input consumed).
Eigen::MatrixXd simulate_open_loop(const ModelParameters& p, const RegressorState& x0,
                                   const Eigen::MatrixXd& u_seq);
Eigen::MatrixXd simulate_open_loop(const NnarxParameters& p, const RegressorState& x0,
                                   const Eigen::MatrixXd& u_seq);

/// FIT index over k in [washout, T-1]:
///   100 (1 - sum ||yhat_k - y_k|| / sum ||y_k - y_avg||).
/// Throws on a constant ground-truth signal (zero denominator).
double fit_index(const Eigen::MatrixXd& y_hat, const Eigen::MatrixXd& y, int washout);
double fit_index_channel(const Eigen::MatrixXd& y_hat, const Eigen::MatrixXd& y,
                         int channel, int washout);

void save_model(const std::filesystem::path& path, const ModelParameters& p);
void save_model(const std::filesystem::path& path, const NnarxParameters& p);
ModelParameters load_model(const std::filesystem::path& path);
NnarxParameters load_nnarx_model(const std::filesystem::path& path);
std::string peek_model_kind(const std::filesystem::path& path);  // "cannarx" | "nnarx"

// Flat views over every learnable tensor, in a fixed order shared by the
// optimizer, the tape leaves, and the finite-difference tests:
// f (W, b per layer), then g, then W0, U0. NNARX: layers only.
struct ParamView {
  double* data;
  Eigen::Index size;
};
std::vector<ParamView> param_views(ModelParameters& p);
std::vector<ParamView> param_views(NnarxParameters& p);
Eigen::Index param_count(const ModelParameters& p);
Eigen::Index param_count(const NnarxParameters& p);

// --- Tape graph builders (shared by trainer, inverse verifier, MPC) ---

struct ParamLeaves {
  std::vector<grad::Tape::Id> ids;  // same order as param_views
};

/// Create one leaf per learnable tensor. Biases enter as column matrices.
ParamLeaves make_param_leaves(grad::Tape& tape, const ModelParameters& p);
ParamLeaves make_param_leaves(grad::Tape& tape, const NnarxParameters& p);
/// Same bindings as constants, for graphs differentiated w.r.t. inputs only.
ParamLeaves make_param_constants(grad::Tape& tape, const ModelParameters& p);
/// Refresh leaf values from the parameter struct (replay path).
void write_params_to_tape(grad::Tape& tape, const ParamLeaves& leaves,
                          const ModelParameters& p);
void write_params_to_tape(grad::Tape& tape, const ParamLeaves& leaves,
                          const NnarxParameters& p);
/// Flatten leaf adjoints into `grad` (column-major, param_views order).
void accumulate_leaf_adjoints(const grad::Tape& tape, const ParamLeaves& leaves,
                              Eigen::VectorXd& grad);

grad::Tape::Id record_f(grad::Tape& tape, const ParamLeaves& leaves,
                        const ModelParameters& p, grad::Tape::Id x);
grad::Tape::Id record_g(grad::Tape& tape, const ParamLeaves& leaves,
                        const ModelParameters& p, grad::Tape::Id x);
grad::Tape::Id record_eta(grad::Tape& tape, const ParamLeaves& leaves,
                          const ModelParameters& p, grad::Tape::Id x, grad::Tape::Id u);
grad::Tape::Id record_nnarx_step(grad::Tape& tape, const ParamLeaves& leaves,
                                 const NnarxParameters& p, grad::Tape::Id x,
                                 grad::Tape::Id u);
/// next_x = [x tail; y_next; u]
grad::Tape::Id record_state_advance(grad::Tape& tape, int n_z, grad::Tape::Id x,
                                    grad::Tape::Id y_next, grad::Tape::Id u);

}  // namespace cannarx
