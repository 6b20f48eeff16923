#include "cannarx/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cannarx/io.hpp"

namespace cannarx {

namespace {

Eigen::MatrixXd xavier(Rng& rng, int rows, int cols) {
  const double a = std::sqrt(6.0 / (rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = uniform(rng, -a, a);
  return m;
}

double chain_norm(const Eigen::MatrixXd& head, const std::vector<DenseLayer>& layers) {
  double s = Eigen::JacobiSVD<Eigen::MatrixXd>(head).singularValues()(0);
  for (const auto& l : layers)
    s *= activation_lipschitz(l.act) *
         Eigen::JacobiSVD<Eigen::MatrixXd>(l.W).singularValues()(0);
  return s;
}

void rescale_chain(Eigen::MatrixXd& head, std::vector<DenseLayer>& layers, double target) {
  const double current = chain_norm(head, layers);
  if (current <= 0.0) return;
  const double factor = std::pow(target / current, 1.0 / (1.0 + layers.size()));
  head *= factor;
  for (auto& l : layers) l.W *= factor;
}

}  // namespace

ModelParameters init_cannarx(const CannarxArch& arch, int n_u, int n_y,
                             const std::vector<Scaler>& u_scalers,
                             const std::vector<Scaler>& y_scalers, std::uint64_t seed,
                             bool certified_init, double target_nu) {
  ModelParameters p;
  p.H = arch.H;
  p.n_u = n_u;
  p.n_y = n_y;
  p.u_scalers = u_scalers;
  p.y_scalers = y_scalers;
  p.meta.seed = seed;
  Rng rng(seed);

  int in = p.n();
  for (int w : arch.f_widths) {
    p.f_layers.push_back({xavier(rng, w, in), Eigen::VectorXd::Zero(w), Activation::kTanh});
    in = w;
  }
  p.W0 = xavier(rng, n_y, in);

  in = p.n();
  for (int w : arch.g_hidden_widths) {
    p.g_layers.push_back({xavier(rng, w, in), Eigen::VectorXd::Zero(w), Activation::kTanh});
    in = w;
  }
  p.g_layers.push_back({xavier(rng, n_u, in), Eigen::VectorXd::Zero(n_u), arch.g_final_act});
  p.U0 = xavier(rng, n_y, n_u);

  if (certified_init) {
    // Split the norm budget evenly between the two chains.
    const double budget = 1.0 / std::sqrt(static_cast<double>(p.H)) + target_nu;
    if (budget <= 0.0) throw ValidationError("init_cannarx: target_nu leaves no norm budget");
    rescale_chain(p.W0, p.f_layers, 0.5 * budget);
    rescale_chain(p.U0, p.g_layers, 0.5 * budget);
  }
  p.validate();
  return p;
}

NnarxParameters init_nnarx_matched(Eigen::Index target_param_count, int H, int n_u, int n_y,
                                   const std::vector<Scaler>& u_scalers,
                                   const std::vector<Scaler>& y_scalers,
                                   std::uint64_t seed, bool certified_init,
                                   double target_nu) {
  NnarxParameters p;
  p.H = H;
  p.n_u = n_u;
  p.n_y = n_y;
  p.u_scalers = u_scalers;
  p.y_scalers = y_scalers;
  p.meta.seed = seed;

  const int in = H * (n_u + n_y) + n_u;
  auto count_for = [&](Eigen::Index w) {
    return w * (in + 1) + w * (w + 1) + n_y * (w + 1);
  };
  Eigen::Index best_w = 2;
  for (Eigen::Index w = 2; w <= 128; ++w)
    if (std::abs(count_for(w) - target_param_count) <
        std::abs(count_for(best_w) - target_param_count))
      best_w = w;

  Rng rng(seed);
  const int w = static_cast<int>(best_w);
  p.layers.push_back({xavier(rng, w, in), Eigen::VectorXd::Zero(w), Activation::kTanh});
  p.layers.push_back({xavier(rng, w, w), Eigen::VectorXd::Zero(w), Activation::kTanh});
  p.layers.push_back({xavier(rng, n_y, w), Eigen::VectorXd::Zero(n_y), Activation::kIdentity});
  if (certified_init) {
    const double budget = 1.0 / std::sqrt(static_cast<double>(H)) + target_nu;
    if (budget <= 0.0) throw ValidationError("init_nnarx: target_nu leaves no norm budget");
    double current = 1.0;
    for (const auto& l : p.layers)
      current *= activation_lipschitz(l.act) *
                 Eigen::JacobiSVD<Eigen::MatrixXd>(l.W).singularValues()(0);
    const double factor = std::pow(budget / current, 1.0 / static_cast<double>(p.layers.size()));
    for (auto& l : p.layers) l.W *= factor;
  }
  p.validate();
  return p;
}

void TrainConfig::validate(int T_sub) const {
  if (epochs <= 0) throw ValidationError("train: epochs must be positive");
  if (batch_size <= 0) throw ValidationError("train: batch_size must be positive");
  if (washout < 1 || washout >= T_sub)
    throw ValidationError("train: washout must satisfy 1 <= T_w < T_sub");
  if (lr <= 0.0) throw ValidationError("train: lr must be positive");
}

namespace {

// A rollout loss recorded once and replayed per subsequence: only the
// initial-state / input / target constants change between sequences.
struct RolloutGraph {
  grad::Tape tape;
  ParamLeaves leaves;
  grad::Tape::Id x0 = -1;
  std::vector<grad::Tape::Id> u_ids;  // u_0 .. u_{T-2}
  std::vector<grad::Tape::Id> y_ids;  // targets for k in [T_w, T)
  grad::Tape::Id loss = -1;
  int T = 0, T_w = 0;
};

template <typename Params, typename StepFn>
RolloutGraph build_rollout(const Params& p, int T, int T_w, StepFn&& record_step) {
  RolloutGraph g;
  g.T = T;
  g.T_w = T_w;
  g.leaves = make_param_leaves(g.tape, p);
  g.x0 = g.tape.constant(Eigen::MatrixXd::Zero(p.n(), 1));
  grad::Tape::Id x = g.x0;
  grad::Tape::Id acc = -1;
  for (int k = 1; k < T; ++k) {
    const auto u = g.tape.constant(Eigen::MatrixXd::Zero(p.n_u, 1));
    g.u_ids.push_back(u);
    const auto y_next = record_step(g.tape, g.leaves, x, u);
    if (k >= T_w) {
      const auto target = g.tape.constant(Eigen::MatrixXd::Zero(p.n_y, 1));
      g.y_ids.push_back(target);
      const auto term = g.tape.squared_norm(g.tape.sub(y_next, target));
      acc = acc < 0 ? term : g.tape.add(acc, term);
    }
    x = record_state_advance(g.tape, p.n_z(), x, y_next, u);
  }
  g.loss = g.tape.scale(acc, 1.0 / (T - T_w));
  return g;
}

template <typename Params>
RolloutGraph make_rollout_graph(const Params& p, int T, int T_w);

template <>
RolloutGraph make_rollout_graph(const ModelParameters& p, int T, int T_w) {
  return build_rollout(p, T, T_w, [&p](grad::Tape& tape, const ParamLeaves& leaves,
                                       grad::Tape::Id x, grad::Tape::Id u) {
    return record_eta(tape, leaves, p, x, u);
  });
}

template <>
RolloutGraph make_rollout_graph(const NnarxParameters& p, int T, int T_w) {
  return build_rollout(p, T, T_w, [&p](grad::Tape& tape, const ParamLeaves& leaves,
                                       grad::Tape::Id x, grad::Tape::Id u) {
    return record_nnarx_step(tape, leaves, p, x, u);
  });
}

void load_sequence(RolloutGraph& g, const Subsequence& seq, const Eigen::VectorXd& x0) {
  g.tape.mutable_value(g.x0).col(0) = x0;
  for (int k = 0; k + 1 < g.T; ++k)
    g.tape.mutable_value(g.u_ids[static_cast<std::size_t>(k)]).col(0) =
        seq.u.row(k).transpose();
  for (int k = g.T_w; k < g.T; ++k)
    g.tape.mutable_value(g.y_ids[static_cast<std::size_t>(k - g.T_w)]).col(0) =
        seq.y.row(k).transpose();
}

Eigen::VectorXd read_flat(const std::vector<ParamView>& views) {
  Eigen::Index total = 0;
  for (const auto& v : views) total += v.size;
  Eigen::VectorXd out(total);
  Eigen::Index off = 0;
  for (const auto& v : views) {
    out.segment(off, v.size) = Eigen::Map<const Eigen::VectorXd>(v.data, v.size);
    off += v.size;
  }
  return out;
}

void write_flat(const std::vector<ParamView>& views, const Eigen::VectorXd& flat) {
  Eigen::Index off = 0;
  for (const auto& v : views) {
    Eigen::Map<Eigen::VectorXd>(v.data, v.size) = flat.segment(off, v.size);
    off += v.size;
  }
}

struct Adam {
  Eigen::VectorXd m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;

  explicit Adam(Eigen::Index n) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}

  void update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
};

double cosine_lr(const TrainConfig& c, int epoch) {
  if (c.epochs <= 1) return c.lr;
  const double t = static_cast<double>(epoch) / (c.epochs - 1);
  return c.lr_min + 0.5 * (c.lr - c.lr_min) * (1.0 + std::cos(M_PI * t));
}

constexpr std::uint64_t kValInitSeed = 0x76616c2d696e6974ull;  // fixed across runs

template <typename Params>
double validation_mse(const Params& p, const std::vector<Subsequence>& val, int T_w) {
  if (val.empty()) return 0.0;
  Rng rng(kValInitSeed);
  double total = 0.0;
  for (const auto& seq : val) {
    RegressorState x0 = RegressorState::zero(p.H, p.n_u, p.n_y);
    x0.x = uniform_vector(rng, p.n(), -1.0, 1.0);
    const Eigen::MatrixXd y_hat = simulate_open_loop(p, x0, seq.u);
    const int T = static_cast<int>(seq.u.rows());
    double mse = 0.0;
    for (int k = T_w; k < T; ++k) mse += (y_hat.row(k) - seq.y.row(k)).squaredNorm();
    total += mse / (T - T_w);
  }
  return total / static_cast<double>(val.size());
}

// Shared training loop; the delta-ISS regularizer tape is only present for
// the control-affine architecture.
template <typename Params>
TrainResult train_impl(Params& model, const TrainConfig& config, const Dataset& dataset,
                       bool with_regularizer) {
  model.validate();
  if (dataset.train.empty()) throw ValidationError("train: empty training set");
  const int T = static_cast<int>(dataset.train[0].u.rows());
  config.validate(T);

  RolloutGraph rollout = make_rollout_graph(model, T, config.washout);

  grad::Tape nu_tape;
  ParamLeaves nu_leaves;
  grad::Tape::Id nu_id = -1, rho_id = -1;
  if (with_regularizer) {
    nu_leaves = make_param_leaves(nu_tape, model);
    nu_id = record_diss_residual(nu_tape, nu_leaves, model, config.spectral_iters);
    rho_id = record_regularizer(nu_tape, nu_id, config.pi_plus, config.pi_minus,
                                config.eps_clearance);
  }

  auto views = param_views(model);
  Eigen::VectorXd flat = read_flat(views);
  Eigen::VectorXd grad_buf(flat.size());
  Adam adam(flat.size());
  Rng rng(config.seed);

  TrainResult result;
  Eigen::VectorXd best_flat = flat;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<std::size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), 0);

  const bool extend_for_certification =
      with_regularizer && config.enforce_diss && config.certify_grace > 0;
  const int max_epochs =
      config.epochs + (extend_for_certification ? config.certify_grace : 0);
  const double lr_extension = std::max(config.lr_min, 0.02 * config.lr);

  double nu_value = 0.0;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    const bool in_extension = epoch >= config.epochs;
    const double lr = in_extension ? lr_extension : cosine_lr(config, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::size_t pos = 0;
    int batches = 0;
    while (pos < order.size()) {
      const std::size_t bsz =
          std::min<std::size_t>(config.batch_size, order.size() - pos);
      grad_buf.setZero();
      double mse = 0.0;
      for (std::size_t i = 0; i < bsz; ++i, ++pos) {
        const Subsequence& seq = dataset.train[order[pos]];
        load_sequence(rollout, seq, uniform_vector(rng, model.n(), -1.0, 1.0));
        rollout.tape.forward();
        mse += rollout.tape.scalar(rollout.loss);
        rollout.tape.backward(rollout.loss);
        accumulate_leaf_adjoints(rollout.tape, rollout.leaves, grad_buf);
      }
      grad_buf /= static_cast<double>(bsz);
      mse /= static_cast<double>(bsz);

      double batch_total = mse;
      if (rho_id >= 0) {
        write_params_to_tape(nu_tape, nu_leaves, model);
        nu_tape.forward();
        batch_total += nu_tape.scalar(rho_id);
        nu_tape.backward(rho_id);
        accumulate_leaf_adjoints(nu_tape, nu_leaves, grad_buf);
      }
      if (!std::isfinite(batch_total))
        throw StageError("train: loss diverged (non-finite) at epoch " +
                         std::to_string(epoch));

      adam.update(flat, grad_buf, lr);
      write_flat(views, flat);
      write_params_to_tape(rollout.tape, rollout.leaves, model);
      epoch_loss += batch_total;
      ++batches;
    }
    epoch_loss /= std::max(1, batches);

    // Checkpoint eligibility uses the exact-SVD residual: near the boundary
    // the 50-step power estimate can sit on the wrong side of zero.
    nu_value = diss_residual(model);
    const double val_mse = validation_mse(model, dataset.val, config.washout);
    result.history.push_back({epoch, epoch_loss, val_mse, nu_value});

    const bool eligible =
        !with_regularizer || !config.enforce_diss || nu_value < 0.0;
    if (eligible && val_mse < best_val) {
      best_val = val_mse;
      best_flat = flat;
      result.certified_checkpoint = nu_value < 0.0;
      since_best = 0;
    } else {
      ++since_best;
      if (!in_extension && config.patience > 0 && since_best >= config.patience) break;
    }
    // The extension ends once the residual sits below zero and a certified
    // checkpoint has settled (no val improvement for a while).
    if (in_extension && result.certified_checkpoint && nu_value < 0.0 &&
        since_best >= 15)
      break;
  }

  if (std::isfinite(best_val)) {
    flat = best_flat;
    write_flat(views, flat);
  }
  result.best_val_mse = std::isfinite(best_val) ? best_val
                                                : result.history.back().val_mse;
  model.meta.epochs = static_cast<int>(result.history.size());
  model.meta.seed = config.seed;
  model.meta.nu_residual = diss_residual(model);
  return result;
}

}  // namespace

TrainResult train_cannarx(ModelParameters& model, const TrainConfig& config,
                          const Dataset& dataset) {
  return train_impl(model, config, dataset, config.enforce_diss);
}

TrainResult train_nnarx(NnarxParameters& model, const TrainConfig& config,
                        const Dataset& dataset) {
  return train_impl(model, config, dataset, config.enforce_diss);
}

double batch_loss(const ModelParameters& model, const std::vector<Subsequence>& batch,
                  const TrainConfig& config, std::uint64_t seed) {
  if (batch.empty()) throw ValidationError("batch_loss: empty batch");
  const int T = static_cast<int>(batch[0].u.rows());
  config.validate(T);
  RolloutGraph rollout = make_rollout_graph(model, T, config.washout);
  Rng rng(seed);
  double mse = 0.0;
  for (const auto& seq : batch) {
    load_sequence(rollout, seq, uniform_vector(rng, model.n(), -1.0, 1.0));
    rollout.tape.forward();
    mse += rollout.tape.scalar(rollout.loss);
  }
  mse /= static_cast<double>(batch.size());
  if (config.enforce_diss)
    mse += regularizer(diss_residual_power(model, config.spectral_iters, 1e-12),
                       config.pi_plus, config.pi_minus, config.eps_clearance);
  return mse;
}

namespace {

template <typename Params>
EvalReport evaluate_impl(const Params& model, const std::vector<Episode>& test,
                         int washout) {
  if (test.empty()) throw ValidationError("evaluate: no test episodes");
  model.validate();
  EvalReport report;
  report.fit_channels = Eigen::VectorXd::Zero(model.n_y);
  double fit_vec = 0.0, mse = 0.0;
  for (const auto& ep : test) {
    const Eigen::MatrixXd u = normalize_columns(ep.u, model.u_scalers, true);
    const Eigen::MatrixXd y = normalize_columns(ep.y, model.y_scalers, false);
    const RegressorState x0 = RegressorState::zero(model.H, model.n_u, model.n_y);
    const Eigen::MatrixXd y_hat = simulate_open_loop(model, x0, u);
    const int T = static_cast<int>(u.rows());
    double ep_mse = 0.0;
    for (int k = washout; k < T; ++k) ep_mse += (y_hat.row(k) - y.row(k)).squaredNorm();
    mse += ep_mse / (T - washout);
    fit_vec += fit_index(y_hat, y, washout);
    for (int c = 0; c < model.n_y; ++c)
      report.fit_channels[c] += fit_index_channel(y_hat, y, c, washout);
  }
  const double n = static_cast<double>(test.size());
  report.mse_norm = mse / n;
  report.fit_channels /= n;
  report.fit_vector = fit_vec / n;
  report.fit_overall = report.fit_channels.mean();
  return report;
}

}  // namespace

EvalReport evaluate(const ModelParameters& model, const std::vector<Episode>& test,
                    int washout) {
  return evaluate_impl(model, test, washout);
}

EvalReport evaluate(const NnarxParameters& model, const std::vector<Episode>& test,
                    int washout) {
  return evaluate_impl(model, test, washout);
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochStats>& history) {
  CsvTable table;
  table.columns = {"epoch", "train_loss", "val_mse", "nu"};
  table.data.resize(static_cast<Eigen::Index>(history.size()), 4);
  for (std::size_t i = 0; i < history.size(); ++i) {
    table.data(static_cast<Eigen::Index>(i), 0) = history[i].epoch;
    table.data(static_cast<Eigen::Index>(i), 1) = history[i].train_loss;
    table.data(static_cast<Eigen::Index>(i), 2) = history[i].val_mse;
    table.data(static_cast<Eigen::Index>(i), 3) = history[i].nu;
  }
  write_csv(path, table);
}

}  // namespace cannarx
