#include "cannarx/grad.hpp"

#include <cmath>

namespace cannarx::grad {

SpectralResult power_spectral_norm(const Eigen::MatrixXd& w, int max_iters, double tol,
                                   Eigen::VectorXd* warm) {
  const Eigen::Index n = w.cols();
  SpectralResult r;
  Eigen::VectorXd v;
  if (warm && warm->size() == n && warm->norm() > 0.0) {
    v = *warm;
  } else {
    // Deterministic start, slightly tilted to avoid symmetric stalls.
    v.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 1e-3 * static_cast<double>(i + 1) / static_cast<double>(n);
  }
  v /= v.norm();

  double sigma = (w * v).norm();
  double prev = sigma;
  r.converged = false;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd z = w.transpose() * (w * v);
    const double zn = z.norm();
    if (zn == 0.0) {  // W v in the null space; for random/trained weights this means W ~ 0
      sigma = 0.0;
      r.converged = true;
      break;
    }
    v = z / zn;
    sigma = (w * v).norm();
    if (std::abs(sigma - prev) <= tol) {
      r.converged = true;
      break;
    }
    prev = sigma;
  }
  r.sigma = sigma;
  r.v = v;
  r.u = sigma > 0.0 ? Eigen::VectorXd((w * v) / sigma) : Eigen::VectorXd::Zero(w.rows());
  if (warm) *warm = v;
  return r;
}

Tape::Id Tape::check(Id id) const {
  if (id < 0 || id >= static_cast<Id>(nodes_.size()))
    throw ValidationError("tape: node id out of range");
  return id;
}

Tape::Id Tape::push(Node node) {
  eval(node);
  nodes_.push_back(std::move(node));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(const Eigen::MatrixXd& v) {
  Node n{};
  n.op = Op::kLeaf;
  n.val = v;
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::constant(const Eigen::MatrixXd& v) {
  Node n{};
  n.op = Op::kConst;
  n.val = v;
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::scalar_const(double v) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = v;
  return constant(m);
}

#define CANNARX_BINARY(name, opcode)                       \
  Tape::Id Tape::name(Id a, Id b) {                        \
    Node n{};                                              \
    n.op = opcode;                                         \
    n.a = check(a);                                        \
    n.b = check(b);                                        \
    return push(std::move(n));                             \
  }

CANNARX_BINARY(add, Op::kAdd)
CANNARX_BINARY(sub, Op::kSub)
CANNARX_BINARY(matvec, Op::kMatVec)
CANNARX_BINARY(hadamard, Op::kHadamard)
CANNARX_BINARY(concat, Op::kConcat)
CANNARX_BINARY(dot, Op::kDot)
#undef CANNARX_BINARY

Tape::Id Tape::scale(Id a, double s) {
  Node n{};
  n.op = Op::kScale;
  n.a = check(a);
  n.c = s;
  return push(std::move(n));
}

Tape::Id Tape::add_const(Id a, double c) {
  Node n{};
  n.op = Op::kAddConst;
  n.a = check(a);
  n.c = c;
  return push(std::move(n));
}

Tape::Id Tape::tanh(Id a) {
  Node n{};
  n.op = Op::kTanh;
  n.a = check(a);
  return push(std::move(n));
}

Tape::Id Tape::sigmoid(Id a) {
  Node n{};
  n.op = Op::kSigmoid;
  n.a = check(a);
  return push(std::move(n));
}

Tape::Id Tape::slice(Id a, int row0, int rows) {
  check(a);
  if (row0 < 0 || rows <= 0 || row0 + rows > nodes_[a].val.rows())
    throw ValidationError("tape: slice out of range");
  Node n{};
  n.op = Op::kSlice;
  n.a = a;
  n.row0 = row0;
  n.rows = rows;
  return push(std::move(n));
}

Tape::Id Tape::squared_norm(Id a) {
  Node n{};
  n.op = Op::kSquaredNorm;
  n.a = check(a);
  return push(std::move(n));
}

Tape::Id Tape::max_const(Id a, double c) {
  Node n{};
  n.op = Op::kMaxConst;
  n.a = check(a);
  n.c = c;
  return push(std::move(n));
}

Tape::Id Tape::min_const(Id a, double c) {
  Node n{};
  n.op = Op::kMinConst;
  n.a = check(a);
  n.c = c;
  return push(std::move(n));
}

Tape::Id Tape::spectral_norm(Id w, int max_iters, double tol) {
  check(w);
  SpectralAux aux;
  aux.max_iters = max_iters;
  aux.tol = tol;
  spectral_.push_back(std::move(aux));
  Node n{};
  n.op = Op::kSpectralNorm;
  n.a = w;
  n.spectral_aux = static_cast<int>(spectral_.size() - 1);
  return push(std::move(n));
}

double Tape::scalar(Id id) const {
  const auto& v = value(id);
  if (v.rows() != 1 || v.cols() != 1) throw ValidationError("tape: node is not scalar");
  return v(0, 0);
}

Eigen::MatrixXd& Tape::mutable_value(Id id) {
  Node& n = nodes_[check(id)];
  if (n.op != Op::kLeaf && n.op != Op::kConst)
    throw ValidationError("tape: only inputs may be overwritten");
  return n.val;
}

void Tape::eval(Node& n) {
  if (n.op == Op::kLeaf || n.op == Op::kConst) return;
  auto& A = nodes_[n.a].val;
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
      break;
    case Op::kAdd:
      n.val = A + nodes_[n.b].val;
      break;
    case Op::kSub:
      n.val = A - nodes_[n.b].val;
      break;
    case Op::kScale:
      n.val = n.c * A;
      break;
    case Op::kAddConst:
      n.val = A.array() + n.c;
      break;
    case Op::kMatVec:
      if (A.cols() != nodes_[n.b].val.rows())
        throw ValidationError("tape: matvec dimension mismatch");
      n.val.noalias() = A * nodes_[n.b].val;
      break;
    case Op::kHadamard:
      if (A.rows() != nodes_[n.b].val.rows() || A.cols() != nodes_[n.b].val.cols())
        throw ValidationError("tape: hadamard shape mismatch");
      n.val = A.cwiseProduct(nodes_[n.b].val);
      break;
    case Op::kTanh:
      n.val = A.array().tanh();
      break;
    case Op::kSigmoid:
      n.val = 1.0 / (1.0 + (-A.array()).exp());
      break;
    case Op::kConcat: {
      const auto& B = nodes_[n.b].val;
      if (A.cols() != B.cols()) throw ValidationError("tape: concat width mismatch");
      n.val.resize(A.rows() + B.rows(), A.cols());
      n.val.topRows(A.rows()) = A;
      n.val.bottomRows(B.rows()) = B;
      break;
    }
    case Op::kSlice:
      n.val = A.middleRows(n.row0, n.rows);
      break;
    case Op::kDot: {
      const auto& B = nodes_[n.b].val;
      if (A.rows() != B.rows() || A.cols() != B.cols())
        throw ValidationError("tape: dot shape mismatch");
      n.val.resize(1, 1);
      n.val(0, 0) = (A.array() * B.array()).sum();
      break;
    }
    case Op::kSquaredNorm:
      n.val.resize(1, 1);
      n.val(0, 0) = A.squaredNorm();
      break;
    case Op::kMaxConst:
      n.val = A.array().max(n.c);
      break;
    case Op::kMinConst:
      n.val = A.array().min(n.c);
      break;
    case Op::kSpectralNorm: {
      SpectralAux& aux = spectral_[static_cast<std::size_t>(n.spectral_aux)];
      Eigen::VectorXd warm = aux.v;
      const SpectralResult r = power_spectral_norm(A, aux.max_iters, aux.tol, &warm);
      aux.v = warm;
      aux.u = r.u;
      aux.converged = r.converged;
      n.val.resize(1, 1);
      n.val(0, 0) = r.sigma;
      break;
    }
  }
}

void Tape::forward() {
  for (auto& n : nodes_)
    if (n.op != Op::kLeaf && n.op != Op::kConst) eval(n);
}

void Tape::backward(Id seed) {
  check(seed);
  if (nodes_[seed].val.rows() != 1 || nodes_[seed].val.cols() != 1)
    throw ValidationError("tape: backward seed must be scalar");
  accum_.assign(nodes_.size(), 0);
  for (auto& n : nodes_) {
    n.adj.resize(n.val.rows(), n.val.cols());
    n.adj.setZero();
  }
  nodes_[seed].adj(0, 0) = 1.0;

  // Constants take no adjoint; skipping them saves the outer products that
  // would otherwise land on frozen weights in input-gradient graphs.
  auto live_a = [this](const Node& n) { return nodes_[n.a].op != Op::kConst; };
  auto live_b = [this](const Node& n) { return nodes_[n.b].op != Op::kConst; };

  for (Id i = seed; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.op == Op::kLeaf || n.op == Op::kConst) continue;
    const Eigen::MatrixXd& g = n.adj;
    if (g.isZero(0.0)) continue;
    Node& a = nodes_[n.a];
    switch (n.op) {
      case Op::kAdd:
        if (live_a(n)) { a.adj += g; ++accum_[n.a]; }
        if (live_b(n)) { nodes_[n.b].adj += g; ++accum_[n.b]; }
        break;
      case Op::kSub:
        if (live_a(n)) { a.adj += g; ++accum_[n.a]; }
        if (live_b(n)) { nodes_[n.b].adj -= g; ++accum_[n.b]; }
        break;
      case Op::kScale:
        if (live_a(n)) { a.adj += n.c * g; ++accum_[n.a]; }
        break;
      case Op::kAddConst:
        if (live_a(n)) { a.adj += g; ++accum_[n.a]; }
        break;
      case Op::kMatVec: {
        Node& b = nodes_[n.b];
        if (live_a(n)) { a.adj.noalias() += g * b.val.transpose(); ++accum_[n.a]; }
        if (live_b(n)) { b.adj.noalias() += a.val.transpose() * g; ++accum_[n.b]; }
        break;
      }
      case Op::kHadamard: {
        Node& b = nodes_[n.b];
        if (live_a(n)) { a.adj.array() += g.array() * b.val.array(); ++accum_[n.a]; }
        if (live_b(n)) { b.adj.array() += g.array() * a.val.array(); ++accum_[n.b]; }
        break;
      }
      case Op::kTanh:
        if (live_a(n)) {
          a.adj.array() += g.array() * (1.0 - n.val.array().square());
          ++accum_[n.a];
        }
        break;
      case Op::kSigmoid:
        if (live_a(n)) {
          a.adj.array() += g.array() * n.val.array() * (1.0 - n.val.array());
          ++accum_[n.a];
        }
        break;
      case Op::kConcat: {
        Node& b = nodes_[n.b];
        if (live_a(n)) { a.adj += g.topRows(a.val.rows()); ++accum_[n.a]; }
        if (live_b(n)) { b.adj += g.bottomRows(b.val.rows()); ++accum_[n.b]; }
        break;
      }
      case Op::kSlice:
        if (live_a(n)) { a.adj.middleRows(n.row0, n.rows) += g; ++accum_[n.a]; }
        break;
      case Op::kDot: {
        Node& b = nodes_[n.b];
        if (live_a(n)) { a.adj += g(0, 0) * b.val; ++accum_[n.a]; }
        if (live_b(n)) { b.adj += g(0, 0) * a.val; ++accum_[n.b]; }
        break;
      }
      case Op::kSquaredNorm:
        if (live_a(n)) { a.adj += 2.0 * g(0, 0) * a.val; ++accum_[n.a]; }
        break;
      case Op::kMaxConst:
        if (live_a(n)) {
          a.adj.array() += g.array() * (a.val.array() >= n.c).cast<double>();
          ++accum_[n.a];
        }
        break;
      case Op::kMinConst:
        if (live_a(n)) {
          a.adj.array() += g.array() * (a.val.array() <= n.c).cast<double>();
          ++accum_[n.a];
        }
        break;
      case Op::kSpectralNorm: {
        // d sigma / d W = u v' at a simple top singular value.
        if (live_a(n)) {
          const SpectralAux& aux = spectral_[static_cast<std::size_t>(n.spectral_aux)];
          a.adj.noalias() += g(0, 0) * (aux.u * aux.v.transpose());
          ++accum_[n.a];
        }
        break;
      }
      case Op::kLeaf:
      case Op::kConst:
        break;
    }
  }
}

bool Tape::spectral_converged(Id id) const {
  const Node& n = nodes_[check(id)];
  if (n.spectral_aux < 0) throw ValidationError("tape: not a spectral norm node");
  return spectral_[static_cast<std::size_t>(n.spectral_aux)].converged;
}

int Tape::accumulation_count(Id id) const {
  check(id);
  if (accum_.empty()) return 0;
  return accum_[static_cast<std::size_t>(id)];
}

}  // namespace cannarx::grad
