#include "cannarx/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "cannarx/io.hpp"

namespace cannarx {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kIdentity: return "identity";
  }
  throw ValidationError("unknown activation");
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "identity") return Activation::kIdentity;
  throw ValidationError("unknown activation tag: " + name);
}

double activation_lipschitz(Activation a) {
  switch (a) {
    case Activation::kTanh: return 1.0;
    case Activation::kSigmoid: return 0.25;
    case Activation::kIdentity: return 1.0;
  }
  throw ValidationError("unknown activation");
}

Eigen::VectorXd apply_activation(Activation a, const Eigen::VectorXd& v) {
  switch (a) {
    case Activation::kTanh: return v.array().tanh();
    case Activation::kSigmoid: return 1.0 / (1.0 + (-v.array()).exp());
    case Activation::kIdentity: return v;
  }
  throw ValidationError("unknown activation");
}

namespace {

void validate_chain(const std::vector<DenseLayer>& layers, int input_dim,
                    const std::string& what) {
  if (layers.empty()) throw ValidationError(what + ": needs at least one layer");
  Eigen::Index in = input_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.W.cols() != in)
      throw ValidationError(what + ": layer " + std::to_string(i) + " input dim mismatch");
    if (l.b.size() != l.W.rows())
      throw ValidationError(what + ": layer " + std::to_string(i) + " bias dim mismatch");
    in = l.W.rows();
  }
}

}  // namespace

void ModelParameters::validate() const {
  if (H < 1 || n_u < 1 || n_y < 1) throw ValidationError("model: bad dims");
  validate_chain(f_layers, n(), "f");
  validate_chain(g_layers, n(), "g");
  for (const auto& l : f_layers)
    if (l.act == Activation::kSigmoid)
      throw ValidationError("f: activations must be zero-centered (tanh or identity)");
  for (std::size_t j = 0; j + 1 < g_layers.size(); ++j)
    if (g_layers[j].act == Activation::kSigmoid)
      throw ValidationError("g: hidden activations must be zero-centered");
  const Activation g_final = g_layers.back().act;
  if (g_final != Activation::kTanh && g_final != Activation::kSigmoid)
    throw ValidationError("g: final activation must be radially bounded (tanh or sigmoid)");
  if (g_layers.back().W.rows() != n_u)
    throw ValidationError("g: final layer width must equal n_u");
  if (W0.rows() != n_y || W0.cols() != f_layers.back().W.rows())
    throw ValidationError("W0 dimension mismatch");
  if (U0.rows() != n_y || U0.cols() != n_u)
    throw ValidationError("U0 dimension mismatch");
  if (u_scalers.size() != static_cast<std::size_t>(n_u) ||
      y_scalers.size() != static_cast<std::size_t>(n_y))
    throw ValidationError("model: scaler count mismatch");
  validate_scalers(u_scalers);
  validate_scalers(y_scalers);
}

void NnarxParameters::validate() const {
  if (H < 1 || n_u < 1 || n_y < 1) throw ValidationError("nnarx: bad dims");
  validate_chain(layers, n() + n_u, "nnarx");
  if (layers.back().W.rows() != n_y)
    throw ValidationError("nnarx: output layer width must equal n_y");
  if (layers.back().act != Activation::kIdentity)
    throw ValidationError("nnarx: output layer must be linear");
  if (u_scalers.size() != static_cast<std::size_t>(n_u) ||
      y_scalers.size() != static_cast<std::size_t>(n_y))
    throw ValidationError("nnarx: scaler count mismatch");
}

RegressorState RegressorState::zero(int H, int n_u, int n_y) {
  RegressorState s;
  s.H = H;
  s.n_u = n_u;
  s.n_y = n_y;
  s.x = Eigen::VectorXd::Zero(H * (n_u + n_y));
  return s;
}

RegressorState RegressorState::constant(int H, const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& u) {
  RegressorState s;
  s.H = H;
  s.n_u = static_cast<int>(u.size());
  s.n_y = static_cast<int>(y.size());
  s.x.resize(H * s.n_z());
  for (int h = 0; h < H; ++h) {
    s.x.segment(h * s.n_z(), s.n_y) = y;
    s.x.segment(h * s.n_z() + s.n_y, s.n_u) = u;
  }
  return s;
}

Eigen::VectorXd RegressorState::output() const {
  return x.segment((H - 1) * n_z(), n_y);
}

void RegressorState::advance(const Eigen::VectorXd& y_next, const Eigen::VectorXd& u_now) {
  if (y_next.size() != n_y || u_now.size() != n_u)
    throw ValidationError("advance: dimension mismatch");
  const int nz = n_z();
  const int n = H * nz;
  for (int i = 0; i + nz < n; ++i) x[i] = x[i + nz];  // shift one block down
  x.segment(n - nz, n_y) = y_next;
  x.tail(n_u) = u_now;
}

namespace {

Eigen::VectorXd eval_chain(const std::vector<DenseLayer>& layers, Eigen::VectorXd v) {
  for (const auto& l : layers) v = apply_activation(l.act, l.W * v + l.b);
  return v;
}

}  // namespace

Eigen::VectorXd eval_f(const ModelParameters& p, const Eigen::VectorXd& x) {
  if (x.size() != p.n()) throw ValidationError("eval_f: state dimension mismatch");
  return eval_chain(p.f_layers, x);
}

Eigen::VectorXd eval_g(const ModelParameters& p, const Eigen::VectorXd& x) {
  if (x.size() != p.n()) throw ValidationError("eval_g: state dimension mismatch");
  return eval_chain(p.g_layers, x);
}

Eigen::VectorXd eta(const ModelParameters& p, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& u) {
  if (u.size() != p.n_u) throw ValidationError("eta: input dimension mismatch");
  return p.W0 * eval_f(p, x) + p.U0 * eval_g(p, x).cwiseProduct(u);
}

Eigen::VectorXd predict_and_advance(const ModelParameters& p, RegressorState& state,
                                    const Eigen::VectorXd& u) {
  Eigen::VectorXd y_next = eta(p, state.x, u);
  state.advance(y_next, u);
  return y_next;
}

Eigen::VectorXd eval_nnarx(const NnarxParameters& p, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& u) {
  if (x.size() != p.n() || u.size() != p.n_u)
    throw ValidationError("eval_nnarx: dimension mismatch");
  Eigen::VectorXd v(p.n() + p.n_u);
  v << x, u;
  return eval_chain(p.layers, v);
}

Eigen::VectorXd predict_and_advance(const NnarxParameters& p, RegressorState& state,
                                    const Eigen::VectorXd& u) {
  Eigen::VectorXd y_next = eval_nnarx(p, state.x, u);
  state.advance(y_next, u);
  return y_next;
}

namespace {

template <typename Params>
Eigen::MatrixXd simulate_impl(const Params& p, const RegressorState& x0,
                              const Eigen::MatrixXd& u_seq) {
  if (x0.x.size() != p.n()) throw ValidationError("simulate: state dimension mismatch");
  if (u_seq.cols() != p.n_u) throw ValidationError("simulate: input channel mismatch");
  const int T = static_cast<int>(u_seq.rows());
  Eigen::MatrixXd y_hat(T, p.n_y);
  RegressorState state = x0;
  if (T > 0) y_hat.row(0) = state.output().transpose();
  for (int k = 1; k < T; ++k)
    y_hat.row(k) = predict_and_advance(p, state, u_seq.row(k - 1).transpose()).transpose();
  return y_hat;
}

}  // namespace

Eigen::MatrixXd simulate_open_loop(const ModelParameters& p, const RegressorState& x0,
                                   const Eigen::MatrixXd& u_seq) {
  return simulate_impl(p, x0, u_seq);
}

Eigen::MatrixXd simulate_open_loop(const NnarxParameters& p, const RegressorState& x0,
                                   const Eigen::MatrixXd& u_seq) {
  return simulate_impl(p, x0, u_seq);
}

namespace {

double fit_from_errors(const Eigen::VectorXd& err, const Eigen::VectorXd& dev) {
  const double denom = dev.sum();
  if (denom <= 0.0)
    throw ValidationError("fit_index: constant ground-truth signal");
  return 100.0 * (1.0 - err.sum() / denom);
}

}  // namespace

double fit_index(const Eigen::MatrixXd& y_hat, const Eigen::MatrixXd& y, int washout) {
  if (y_hat.rows() != y.rows() || y_hat.cols() != y.cols())
    throw ValidationError("fit_index: shape mismatch");
  const int T = static_cast<int>(y.rows());
  if (washout < 0 || washout >= T) throw ValidationError("fit_index: bad washout");
  const int m = T - washout;
  const Eigen::RowVectorXd y_avg = y.bottomRows(m).colwise().mean();
  Eigen::VectorXd err(m), dev(m);
  for (int k = 0; k < m; ++k) {
    err[k] = (y_hat.row(washout + k) - y.row(washout + k)).norm();
    dev[k] = (y.row(washout + k) - y_avg).norm();
  }
  return fit_from_errors(err, dev);
}

double fit_index_channel(const Eigen::MatrixXd& y_hat, const Eigen::MatrixXd& y,
                         int channel, int washout) {
  if (channel < 0 || channel >= y.cols()) throw ValidationError("fit_index: bad channel");
  return fit_index(y_hat.col(channel), y.col(channel), washout);
}

// --- serialization ---

namespace {

nlohmann::json layer_to_json(const DenseLayer& l) {
  nlohmann::json j;
  j["W"] = matrix_to_json(l.W);
  j["b"] = std::vector<double>(l.b.data(), l.b.data() + l.b.size());
  j["activation"] = activation_name(l.act);
  return j;
}

DenseLayer layer_from_json(const nlohmann::json& j) {
  DenseLayer l;
  l.W = matrix_from_json(j.at("W"));
  const auto b = j.at("b").get<std::vector<double>>();
  l.b = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  l.act = activation_from_name(j.at("activation").get<std::string>());
  return l;
}

nlohmann::json scalers_json(const std::vector<Scaler>& u, const std::vector<Scaler>& y) {
  nlohmann::json j;
  j["u"] = nlohmann::json::array();
  j["y"] = nlohmann::json::array();
  for (const auto& s : u) j["u"].push_back({{"min", s.min}, {"max", s.max}});
  for (const auto& s : y) j["y"].push_back({{"min", s.min}, {"max", s.max}});
  return j;
}

void scalers_from_json(const nlohmann::json& j, std::vector<Scaler>& u,
                       std::vector<Scaler>& y) {
  u.clear();
  y.clear();
  for (const auto& s : j.at("u")) u.push_back({s.at("min").get<double>(), s.at("max").get<double>()});
  for (const auto& s : j.at("y")) y.push_back({s.at("min").get<double>(), s.at("max").get<double>()});
}

nlohmann::json meta_json(const TrainingMeta& m) {
  return {{"nu_residual", m.nu_residual}, {"epochs", m.epochs}, {"seed", m.seed}};
}

TrainingMeta meta_from_json(const nlohmann::json& j) {
  TrainingMeta m;
  m.nu_residual = j.at("nu_residual").get<double>();
  m.epochs = j.at("epochs").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

constexpr int kSchemaVersion = 1;

}  // namespace

void save_model(const std::filesystem::path& path, const ModelParameters& p) {
  p.validate();
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "cannarx";
  j["dims"] = {{"H", p.H}, {"n_u", p.n_u}, {"n_y", p.n_y}};
  j["f_layers"] = nlohmann::json::array();
  for (const auto& l : p.f_layers) j["f_layers"].push_back(layer_to_json(l));
  j["g_layers"] = nlohmann::json::array();
  for (const auto& l : p.g_layers) j["g_layers"].push_back(layer_to_json(l));
  j["W0"] = matrix_to_json(p.W0);
  j["U0"] = matrix_to_json(p.U0);
  j["scalers"] = scalers_json(p.u_scalers, p.y_scalers);
  j["training_meta"] = meta_json(p.meta);
  write_text_file(path, j.dump(2) + "\n");
}

void save_model(const std::filesystem::path& path, const NnarxParameters& p) {
  p.validate();
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "nnarx";
  j["dims"] = {{"H", p.H}, {"n_u", p.n_u}, {"n_y", p.n_y}};
  j["layers"] = nlohmann::json::array();
  for (const auto& l : p.layers) j["layers"].push_back(layer_to_json(l));
  j["scalers"] = scalers_json(p.u_scalers, p.y_scalers);
  j["training_meta"] = meta_json(p.meta);
  write_text_file(path, j.dump(2) + "\n");
}

namespace {

nlohmann::json load_checked(const std::filesystem::path& path, const std::string& kind) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw ValidationError("model file: unsupported schema version");
  if (j.at("kind").get<std::string>() != kind)
    throw ValidationError("model file: expected kind '" + kind + "'");
  return j;
}

}  // namespace

ModelParameters load_model(const std::filesystem::path& path) {
  const nlohmann::json j = load_checked(path, "cannarx");
  ModelParameters p;
  p.schema_version = kSchemaVersion;
  p.H = j.at("dims").at("H").get<int>();
  p.n_u = j.at("dims").at("n_u").get<int>();
  p.n_y = j.at("dims").at("n_y").get<int>();
  for (const auto& l : j.at("f_layers")) p.f_layers.push_back(layer_from_json(l));
  for (const auto& l : j.at("g_layers")) p.g_layers.push_back(layer_from_json(l));
  p.W0 = matrix_from_json(j.at("W0"));
  p.U0 = matrix_from_json(j.at("U0"));
  scalers_from_json(j.at("scalers"), p.u_scalers, p.y_scalers);
  p.meta = meta_from_json(j.at("training_meta"));
  p.validate();
  return p;
}

NnarxParameters load_nnarx_model(const std::filesystem::path& path) {
  const nlohmann::json j = load_checked(path, "nnarx");
  NnarxParameters p;
  p.schema_version = kSchemaVersion;
  p.H = j.at("dims").at("H").get<int>();
  p.n_u = j.at("dims").at("n_u").get<int>();
  p.n_y = j.at("dims").at("n_y").get<int>();
  for (const auto& l : j.at("layers")) p.layers.push_back(layer_from_json(l));
  scalers_from_json(j.at("scalers"), p.u_scalers, p.y_scalers);
  p.meta = meta_from_json(j.at("training_meta"));
  p.validate();
  return p;
}

std::string peek_model_kind(const std::filesystem::path& path) {
  return nlohmann::json::parse(read_text_file(path)).at("kind").get<std::string>();
}

// --- flat parameter views ---

namespace {

void push_layer_views(std::vector<ParamView>& out, std::vector<DenseLayer>& layers) {
  for (auto& l : layers) {
    out.push_back({l.W.data(), l.W.size()});
    out.push_back({l.b.data(), l.b.size()});
  }
}

}  // namespace

std::vector<ParamView> param_views(ModelParameters& p) {
  std::vector<ParamView> out;
  push_layer_views(out, p.f_layers);
  push_layer_views(out, p.g_layers);
  out.push_back({p.W0.data(), p.W0.size()});
  out.push_back({p.U0.data(), p.U0.size()});
  return out;
}

std::vector<ParamView> param_views(NnarxParameters& p) {
  std::vector<ParamView> out;
  push_layer_views(out, p.layers);
  return out;
}

Eigen::Index param_count(const ModelParameters& p) {
  Eigen::Index n = p.W0.size() + p.U0.size();
  for (const auto& l : p.f_layers) n += l.W.size() + l.b.size();
  for (const auto& l : p.g_layers) n += l.W.size() + l.b.size();
  return n;
}

Eigen::Index param_count(const NnarxParameters& p) {
  Eigen::Index n = 0;
  for (const auto& l : p.layers) n += l.W.size() + l.b.size();
  return n;
}

// --- tape graph builders ---

namespace {

void push_layer_leaves(grad::Tape& tape, ParamLeaves& leaves,
                       const std::vector<DenseLayer>& layers) {
  for (const auto& l : layers) {
    leaves.ids.push_back(tape.leaf(l.W));
    leaves.ids.push_back(tape.leaf(l.b));
  }
}

}  // namespace

ParamLeaves make_param_leaves(grad::Tape& tape, const ModelParameters& p) {
  ParamLeaves leaves;
  push_layer_leaves(tape, leaves, p.f_layers);
  push_layer_leaves(tape, leaves, p.g_layers);
  leaves.ids.push_back(tape.leaf(p.W0));
  leaves.ids.push_back(tape.leaf(p.U0));
  return leaves;
}

ParamLeaves make_param_leaves(grad::Tape& tape, const NnarxParameters& p) {
  ParamLeaves leaves;
  push_layer_leaves(tape, leaves, p.layers);
  return leaves;
}

ParamLeaves make_param_constants(grad::Tape& tape, const ModelParameters& p) {
  ParamLeaves leaves;
  for (const auto& l : p.f_layers) {
    leaves.ids.push_back(tape.constant(l.W));
    leaves.ids.push_back(tape.constant(l.b));
  }
  for (const auto& l : p.g_layers) {
    leaves.ids.push_back(tape.constant(l.W));
    leaves.ids.push_back(tape.constant(l.b));
  }
  leaves.ids.push_back(tape.constant(p.W0));
  leaves.ids.push_back(tape.constant(p.U0));
  return leaves;
}

namespace {

void write_views_to_tape(grad::Tape& tape, const ParamLeaves& leaves,
                         const std::vector<ParamView>& views) {
  if (views.size() != leaves.ids.size())
    throw ValidationError("write_params_to_tape: leaf/view mismatch");
  for (std::size_t i = 0; i < views.size(); ++i) {
    Eigen::MatrixXd& dst = tape.mutable_value(leaves.ids[i]);
    if (dst.size() != views[i].size)
      throw ValidationError("write_params_to_tape: shape changed");
    Eigen::Map<Eigen::VectorXd>(dst.data(), dst.size()) =
        Eigen::Map<const Eigen::VectorXd>(views[i].data, views[i].size);
  }
}

}  // namespace

void write_params_to_tape(grad::Tape& tape, const ParamLeaves& leaves,
                          const ModelParameters& p) {
  auto& mutable_p = const_cast<ModelParameters&>(p);
  write_views_to_tape(tape, leaves, param_views(mutable_p));
}

void write_params_to_tape(grad::Tape& tape, const ParamLeaves& leaves,
                          const NnarxParameters& p) {
  auto& mutable_p = const_cast<NnarxParameters&>(p);
  write_views_to_tape(tape, leaves, param_views(mutable_p));
}

void accumulate_leaf_adjoints(const grad::Tape& tape, const ParamLeaves& leaves,
                              Eigen::VectorXd& grad) {
  Eigen::Index offset = 0;
  for (const auto id : leaves.ids) {
    const Eigen::MatrixXd& adj = tape.adjoint(id);
    if (offset + adj.size() > grad.size())
      throw ValidationError("accumulate_leaf_adjoints: gradient buffer too small");
    grad.segment(offset, adj.size()) +=
        Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size());
    offset += adj.size();
  }
  if (offset != grad.size())
    throw ValidationError("accumulate_leaf_adjoints: gradient buffer size mismatch");
}

namespace {

grad::Tape::Id record_chain(grad::Tape& tape, const std::vector<DenseLayer>& layers,
                            const std::vector<grad::Tape::Id>& ids, std::size_t first,
                            grad::Tape::Id v) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto w_id = ids[first + 2 * i];
    const auto b_id = ids[first + 2 * i + 1];
    v = tape.add(tape.matvec(w_id, v), b_id);
    switch (layers[i].act) {
      case Activation::kTanh: v = tape.tanh(v); break;
      case Activation::kSigmoid: v = tape.sigmoid(v); break;
      case Activation::kIdentity: break;
    }
  }
  return v;
}

}  // namespace

grad::Tape::Id record_f(grad::Tape& tape, const ParamLeaves& leaves,
                        const ModelParameters& p, grad::Tape::Id x) {
  return record_chain(tape, p.f_layers, leaves.ids, 0, x);
}

grad::Tape::Id record_g(grad::Tape& tape, const ParamLeaves& leaves,
                        const ModelParameters& p, grad::Tape::Id x) {
  return record_chain(tape, p.g_layers, leaves.ids, 2 * p.f_layers.size(), x);
}

grad::Tape::Id record_eta(grad::Tape& tape, const ParamLeaves& leaves,
                          const ModelParameters& p, grad::Tape::Id x, grad::Tape::Id u) {
  const auto w0_id = leaves.ids[leaves.ids.size() - 2];
  const auto u0_id = leaves.ids[leaves.ids.size() - 1];
  const auto f_id = record_f(tape, leaves, p, x);
  const auto g_id = record_g(tape, leaves, p, x);
  return tape.add(tape.matvec(w0_id, f_id),
                  tape.matvec(u0_id, tape.hadamard(g_id, u)));
}

grad::Tape::Id record_nnarx_step(grad::Tape& tape, const ParamLeaves& leaves,
                                 const NnarxParameters& p, grad::Tape::Id x,
                                 grad::Tape::Id u) {
  return record_chain(tape, p.layers, leaves.ids, 0, tape.concat(x, u));
}

grad::Tape::Id record_state_advance(grad::Tape& tape, int n_z, grad::Tape::Id x,
                                    grad::Tape::Id y_next, grad::Tape::Id u) {
  const int n = static_cast<int>(tape.value(x).rows());
  return tape.concat(tape.slice(x, n_z, n - n_z), tape.concat(y_next, u));
}

}  // namespace cannarx
