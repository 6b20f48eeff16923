#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cannarx/common.hpp"

namespace cannarx::grad {

// Reverse-mode tape over the op set needed for rollout losses: matrix-vector
// products, elementwise nonlinearities, Hadamard products, concat/slice,
// squared-error reductions, and the spectral norm.
//
// A tape built once can be replayed: overwrite leaf values in place, call
// forward(), then backward(). Shapes are fixed at recording time, so replays
// run allocation-free.
class Tape {
 public:
  using Id = int;

  Id leaf(const Eigen::MatrixXd& v);      // differentiable input
  Id constant(const Eigen::MatrixXd& v);  // non-differentiable input
  Id scalar_const(double v);

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id scale(Id a, double s);
  Id add_const(Id a, double c);  // elementwise a + c
  Id matvec(Id w, Id v);
  Id hadamard(Id a, Id b);       // also scalar*scalar on 1x1 nodes
  Id tanh(Id a);
  Id sigmoid(Id a);
  Id concat(Id a, Id b);         // vertical stack
  Id slice(Id a, int row0, int rows);
  Id dot(Id a, Id b);
  Id squared_norm(Id a);
  Id max_const(Id a, double c);  // elementwise max(a, c)
  Id min_const(Id a, double c);

  // Largest singular value by power iteration with a warm-started right
  // vector that persists across replays of this tape. The convergence flag
  // records whether consecutive estimates settled within tol by max_iters.
  Id spectral_norm(Id w, int max_iters = 50, double tol = 1e-9);

  const Eigen::MatrixXd& value(Id id) const { return nodes_[check(id)].val; }
  double scalar(Id id) const;
  Eigen::MatrixXd& mutable_value(Id id);  // leaves/constants only, shape-fixed

  void forward();           // recompute every non-input node in order
  void backward(Id seed);   // seed must be 1x1; zeroes and refills adjoints
  const Eigen::MatrixXd& adjoint(Id id) const { return nodes_[check(id)].adj; }

  bool spectral_converged(Id id) const;
  int accumulation_count(Id id) const;  // adjoint += events in last backward
  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kLeaf, kConst, kAdd, kSub, kScale, kAddConst, kMatVec, kHadamard,
    kTanh, kSigmoid, kConcat, kSlice, kDot, kSquaredNorm, kMaxConst,
    kMinConst, kSpectralNorm,
  };

  struct Node {
    Op op;
    Id a = -1, b = -1;
    double c = 0.0;       // scalar operand
    int row0 = 0, rows = 0;
    Eigen::MatrixXd val;
    Eigen::MatrixXd adj;
    int spectral_aux = -1;
  };

  struct SpectralAux {
    Eigen::VectorXd v;  // right singular vector estimate (warm start)
    Eigen::VectorXd u;  // left singular vector at last forward
    int max_iters = 50;
    double tol = 1e-9;
    bool converged = true;
  };

  Id push(Node node);
  void eval(Node& n);
  Id check(Id id) const;

  std::vector<Node> nodes_;
  std::vector<SpectralAux> spectral_;
  std::vector<int> accum_;
};

// Standalone power-iteration spectral norm (same routine the tape op uses).
struct SpectralResult {
  double sigma = 0.0;
  Eigen::VectorXd u, v;
  bool converged = true;
};
SpectralResult power_spectral_norm(const Eigen::MatrixXd& w, int max_iters = 50,
                                   double tol = 1e-9, Eigen::VectorXd* warm = nullptr);

}  // namespace cannarx::grad
