#include "cannarx/imc.hpp"

#include <chrono>
#include <cmath>

#include "cannarx/io.hpp"

namespace cannarx {

LowPassFilter LowPassFilter::from_time_constant(double tau_r, double tau_s, int n) {
  if (tau_r <= 0.0 || tau_s <= 0.0)
    throw ValidationError("filter: time constants must be positive");
  LowPassFilter f;
  f.a = std::exp(-tau_s / tau_r);
  f.state = Eigen::VectorXd::Zero(n);
  return f;
}

Eigen::VectorXd LowPassFilter::step(const Eigen::VectorXd& input) {
  state = a * state + (1.0 - a) * input;
  return state;
}

namespace {

struct ChannelGraph {
  grad::Tape tape;
  grad::Tape::Id x = -1;
  grad::Tape::Id gj = -1;
};

ChannelGraph make_channel_graph(const ModelParameters& p, int channel) {
  ChannelGraph g;
  const ParamLeaves leaves = make_param_leaves(g.tape, p);
  g.x = g.tape.leaf(Eigen::MatrixXd::Zero(p.n(), 1));
  g.gj = g.tape.slice(record_g(g.tape, leaves, p, g.x), channel, 1);
  return g;
}

}  // namespace

Assumption3Report verify_assumption3(const ModelParameters& p,
                                     const Assumption3Config& config) {
  p.validate();
  Assumption3Report report;
  report.per_channel = Eigen::VectorXd::Constant(p.n_u, std::numeric_limits<double>::infinity());
  report.argmin = Eigen::MatrixXd::Zero(p.n(), p.n_u);
  Rng rng(config.seed);

  // Coarse random screen shared by all channels.
  for (int s = 0; s < config.n_screen; ++s) {
    const Eigen::VectorXd x = uniform_vector(rng, p.n(), -1.0, 1.0);
    const Eigen::VectorXd g = eval_g(p, x);
    for (int j = 0; j < p.n_u; ++j) {
      const double v = std::abs(g[j]);
      if (v < report.per_channel[j]) {
        report.per_channel[j] = v;
        report.argmin.col(j) = x;
      }
    }
  }

  // Multi-start projected descent on |g_j|, gradients from the tape.
  for (int j = 0; j < p.n_u; ++j) {
    ChannelGraph graph = make_channel_graph(p, j);
    std::vector<Eigen::VectorXd> starts;
    starts.push_back(report.argmin.col(j));
    for (int s = 1; s < config.n_starts; ++s)
      starts.push_back(uniform_vector(rng, p.n(), -1.0, 1.0));

    for (auto& x : starts) {
      graph.tape.mutable_value(graph.x).col(0) = x;
      graph.tape.forward();
      double value = std::abs(graph.tape.scalar(graph.gj));
      for (int it = 0; it < config.descent_iters; ++it) {
        graph.tape.backward(graph.gj);
        const double sign = graph.tape.scalar(graph.gj) >= 0.0 ? 1.0 : -1.0;
        const Eigen::VectorXd d = sign * graph.tape.adjoint(graph.x).col(0);
        double step_size = 0.25;
        bool improved = false;
        while (step_size > 1e-12) {
          Eigen::VectorXd x_try =
              (x - step_size * d).cwiseMax(-1.0).cwiseMin(1.0);
          graph.tape.mutable_value(graph.x).col(0) = x_try;
          graph.tape.forward();
          const double v_try = std::abs(graph.tape.scalar(graph.gj));
          if (v_try < value) {
            x = x_try;
            value = v_try;
            improved = true;
            break;
          }
          step_size *= 0.5;
        }
        if (!improved) break;
        if (value == 0.0) break;
      }
      if (value < report.per_channel[j]) {
        report.per_channel[j] = value;
        report.argmin.col(j) = x;
      }
    }
  }
  report.eps_star = report.per_channel.minCoeff();
  return report;
}

Eigen::MatrixXd moore_penrose(const Eigen::MatrixXd& m) {
  return m.completeOrthogonalDecomposition().pseudoInverse();
}

Eigen::VectorXd imc_control(const ModelParameters& p, const Eigen::MatrixXd& u0_pinv,
                            const Eigen::VectorXd& x, const Eigen::VectorXd& r) {
  const Eigen::VectorXd raw =
      (u0_pinv * (r - p.W0 * eval_f(p, x))).cwiseQuotient(eval_g(p, x));
  return raw.cwiseMax(-1.0).cwiseMin(1.0);
}

ImcController::ImcController(ModelParameters params, const ImcConfig& config,
                             double eps_star)
    : params_(std::move(params)), config_(config) {
  params_.validate();
  if (!(eps_star > config.eps_tolerance))
    throw ValidationError("imc: inverse ill-posed, eps_star below tolerance");
  u0_pinv_ = moore_penrose(params_.U0);
  state_ = RegressorState::zero(params_.H, params_.n_u, params_.n_y);
  f_r_ = LowPassFilter::from_time_constant(config.tau_r, config.tau_s, params_.n_y);
  f_m_ = LowPassFilter::from_time_constant(config.tau_r, config.tau_s, params_.n_y);
}

void ImcController::initialize(const Eigen::VectorXd& y0_norm,
                               const Eigen::VectorXd& u0_norm) {
  state_ = RegressorState::constant(params_.H, y0_norm, u0_norm);
  f_r_.reset(y0_norm);
  f_m_.reset(Eigen::VectorXd::Zero(params_.n_y));
}

ImcController::Step ImcController::step(const Eigen::VectorXd& y_meas_norm,
                                        const Eigen::VectorXd& yo_norm) {
  Step out;
  out.yhat = state_.output();
  const Eigen::VectorXd e_tilde = f_m_.step(y_meas_norm - out.yhat);
  out.r_model = f_r_.step(yo_norm);
  out.r = out.r_model - e_tilde;
  out.u = imc_control(params_, u0_pinv_, state_.x, out.r);
  predict_and_advance(params_, state_, out.u);
  return out;
}

Eigen::VectorXd ReferenceSchedule::at(double time) const {
  if (t.size() == 0) throw ValidationError("reference schedule is empty");
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (t[i] <= time) idx = i;
    else break;
  }
  return y_ref.row(idx);
}

void save_reference(const std::filesystem::path& path, const ReferenceSchedule& schedule) {
  CsvTable table;
  table.columns.push_back("t");
  for (Eigen::Index c = 0; c < schedule.y_ref.cols(); ++c)
    table.columns.push_back("y" + std::to_string(c + 1) + "_ref");
  table.data.resize(schedule.t.size(), 1 + schedule.y_ref.cols());
  table.data.col(0) = schedule.t;
  table.data.rightCols(schedule.y_ref.cols()) = schedule.y_ref;
  write_csv(path, table);
}

ReferenceSchedule load_reference(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  if (table.columns.empty() || table.columns[0] != "t")
    throw ValidationError("reference csv must start with column t");
  ReferenceSchedule s;
  s.t = table.data.col(0);
  s.y_ref = table.data.rightCols(table.data.cols() - 1);
  return s;
}

void write_loop_csv(const std::filesystem::path& path, const LoopLog& log) {
  if (log.empty()) throw ValidationError("loop log is empty");
  const int n_u = static_cast<int>(log[0].u.size());
  const int n_y = static_cast<int>(log[0].y.size());
  CsvTable table;
  table.columns = {"k", "t"};
  auto add_block = [&table](const std::string& stem, int n) {
    for (int i = 0; i < n; ++i) table.columns.push_back(stem + std::to_string(i + 1));
  };
  add_block("yo", n_y);
  add_block("r", n_y);
  add_block("u", n_u);
  add_block("y", n_y);
  add_block("yhat", n_y);
  table.columns.push_back("latency_us");
  table.columns.push_back("solver_iters");
  table.data.resize(static_cast<Eigen::Index>(log.size()),
                    static_cast<Eigen::Index>(table.columns.size()));
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& rec = log[i];
    Eigen::Index c = 0;
    const auto r = static_cast<Eigen::Index>(i);
    table.data(r, c++) = rec.k;
    table.data(r, c++) = rec.t;
    for (int j = 0; j < n_y; ++j) table.data(r, c++) = rec.yo[j];
    for (int j = 0; j < n_y; ++j) table.data(r, c++) = rec.r[j];
    for (int j = 0; j < n_u; ++j) table.data(r, c++) = rec.u[j];
    for (int j = 0; j < n_y; ++j) table.data(r, c++) = rec.y[j];
    for (int j = 0; j < n_y; ++j) table.data(r, c++) = rec.yhat[j];
    table.data(r, c++) = rec.latency_us;
    table.data(r, c++) = rec.solver_iters;
  }
  write_csv(path, table);
}

LoopLog read_loop_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  int n_u = 0, n_y = 0;
  for (const auto& c : table.columns) {
    if (c.rfind("u", 0) == 0 && c != "u" && std::isdigit(static_cast<unsigned char>(c[1]))) ++n_u;
    if (c.rfind("yo", 0) == 0) ++n_y;
  }
  if (n_u == 0 || n_y == 0) throw ValidationError("loop csv: bad header");
  LoopLog log;
  for (Eigen::Index r = 0; r < table.data.rows(); ++r) {
    LoopRecord rec;
    Eigen::Index c = 0;
    rec.k = static_cast<int>(table.data(r, c++));
    rec.t = table.data(r, c++);
    auto take = [&](int n) {
      Eigen::VectorXd v(n);
      for (int i = 0; i < n; ++i) v[i] = table.data(r, c++);
      return v;
    };
    rec.yo = take(n_y);
    rec.r = take(n_y);
    rec.u = take(n_u);
    rec.y = take(n_y);
    rec.yhat = take(n_y);
    rec.latency_us = table.data(r, c++);
    rec.solver_iters = static_cast<int>(table.data(r, c++));
    log.push_back(std::move(rec));
  }
  return log;
}

TankLoopPlant::TankLoopPlant(const TankParams& params, const TankState& x0, double dt,
                             std::vector<Scaler> u_scalers, std::vector<Scaler> y_scalers,
                             double noise_sigma_cm, std::uint64_t noise_seed)
    : params_(params),
      state_(x0),
      dt_(dt),
      u_scalers_(std::move(u_scalers)),
      y_scalers_(std::move(y_scalers)),
      sigma_(noise_sigma_cm),
      rng_(noise_seed) {
  params_.validate();
}

Eigen::VectorXd TankLoopPlant::measure() {
  Eigen::VectorXd y(4);
  for (int i = 0; i < 4; ++i) {
    double v = state_.h[i];
    if (sigma_ > 0.0) v = clamp(v + gaussian(rng_, 0.0, sigma_), 0.0, kLevelMax);
    y[i] = y_scalers_[static_cast<std::size_t>(i)].normalize(v);
  }
  return y;
}

Eigen::VectorXd TankLoopPlant::initial_output() { return measure(); }

Eigen::VectorXd TankLoopPlant::apply(const Eigen::VectorXd& u_norm) {
  TankInput input{
      clamp(u_scalers_[0].denormalize(u_norm[0]), 0.0, kVoltageMax),
      clamp(u_scalers_[1].denormalize(u_norm[1]), 0.0, kVoltageMax)};
  state_ = step(state_, input, dt_, params_);
  return measure();
}

ModelLoopPlant::ModelLoopPlant(ModelParameters params, const RegressorState& chi0,
                               double noise_sigma, std::uint64_t noise_seed)
    : params_(std::move(params)), chi_(chi0), sigma_(noise_sigma), rng_(noise_seed) {
  params_.validate();
}

Eigen::VectorXd ModelLoopPlant::initial_output() {
  Eigen::VectorXd y = chi_.output();
  if (sigma_ > 0.0)
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += gaussian(rng_, 0.0, sigma_);
  return y;
}

Eigen::VectorXd ModelLoopPlant::apply(const Eigen::VectorXd& u_norm) {
  predict_and_advance(params_, chi_, u_norm);
  return initial_output();
}

LoopLog run_imc_loop(LoopPlant& plant, ImcController& controller,
                     const ReferenceSchedule& schedule, const RunConfig& config) {
  const auto& p = controller.params();
  const double tau_s = 1.0;  // loop time base equals the model sampling period
  Eigen::VectorXd u0 = config.u_init_norm.size() == p.n_u
                           ? config.u_init_norm
                           : Eigen::VectorXd::Zero(p.n_u);
  Eigen::VectorXd y_meas = plant.initial_output();
  controller.initialize(y_meas, u0);

  LoopLog log;
  log.reserve(static_cast<std::size_t>(config.duration));
  for (int k = 0; k < config.duration; ++k) {
    const double t = k * tau_s;
    const Eigen::VectorXd yo_raw = schedule.at(t);
    Eigen::VectorXd yo_norm(p.n_y);
    for (int i = 0; i < p.n_y; ++i)
      yo_norm[i] = p.y_scalers[static_cast<std::size_t>(i)].normalize(yo_raw[i]);

    const auto t0 = std::chrono::steady_clock::now();
    const ImcController::Step step = controller.step(y_meas, yo_norm);
    const auto t1 = std::chrono::steady_clock::now();

    LoopRecord rec;
    rec.k = k;
    rec.t = t;
    rec.yo = yo_raw;
    rec.r.resize(p.n_y);
    rec.y.resize(p.n_y);
    rec.yhat.resize(p.n_y);
    for (int i = 0; i < p.n_y; ++i) {
      const auto& s = p.y_scalers[static_cast<std::size_t>(i)];
      rec.r[i] = s.denormalize(step.r_model[i]);
      rec.y[i] = s.denormalize(y_meas[i]);
      rec.yhat[i] = s.denormalize(step.yhat[i]);
    }
    rec.u.resize(p.n_u);
    for (int i = 0; i < p.n_u; ++i)
      rec.u[i] = p.u_scalers[static_cast<std::size_t>(i)].denormalize(step.u[i]);
    rec.latency_us =
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count() / 1e3;
    log.push_back(std::move(rec));

    y_meas = plant.apply(step.u);
  }
  return log;
}

}  // namespace cannarx
