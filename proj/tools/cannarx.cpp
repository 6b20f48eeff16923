// cannarx: identify provably stable control-affine NARX models of the
// quadruple-tank benchmark and close the loop with the explicit-inverse IMC
// law or the receding-horizon baseline.

#include <CLI11.hpp>
#include <cmath>
#include <iostream>

#include "cannarx/harness.hpp"
#include "cannarx/io.hpp"

namespace {

using namespace cannarx;

PipelineConfig base_config(const std::string& config_path) {
  return config_path.empty() ? PipelineConfig() : load_pipeline_config(config_path);
}

// Voltages whose equilibrium matches the upper-tank levels of a reference
// row; used to start closed-loop runs from a settled plant.
TankInput voltages_for_reference(const Eigen::VectorXd& yo, const TankParams& p) {
  const double flow_b = p.a_out[2] * std::sqrt(2.0 * p.g_grav * std::max(yo[2], 0.0));
  const double flow_a = p.a_out[3] * std::sqrt(2.0 * p.g_grav * std::max(yo[3], 0.0));
  return {clamp(flow_a / ((1.0 - p.gamma_a) * p.kappa_a), 0.0, kVoltageMax),
          clamp(flow_b / ((1.0 - p.gamma_b) * p.kappa_b), 0.0, kVoltageMax)};
}

void advise_on_feasibility(const ModelParameters& model, const ReferenceSchedule& schedule) {
  for (Eigen::Index i = 0; i < schedule.t.size(); ++i) {
    Eigen::VectorXd yo_norm(model.n_y);
    for (int c = 0; c < model.n_y; ++c)
      yo_norm[c] = model.y_scalers[static_cast<std::size_t>(c)].normalize(
          schedule.y_ref(i, c));
    const EquilibriumTriple eq = find_equilibrium(model, yo_norm);
    if (eq.u.cwiseAbs().maxCoeff() >= 1.0 - 1e-9)
      std::cerr << "advisory: reference segment " << i
                << " needs a saturated steady input; tracking will be best-effort\n";
  }
}

struct LoopSetup {
  ModelParameters model;
  ReferenceSchedule schedule;
  TankState x0;
  Eigen::VectorXd u_init_norm;
};

LoopSetup make_loop_setup(const std::string& model_path, const std::string& ref_path) {
  LoopSetup setup;
  setup.model = load_model(model_path);
  setup.schedule = load_reference(ref_path);
  if (setup.schedule.y_ref.cols() != setup.model.n_y)
    throw ValidationError("reference channel count does not match the model");
  const TankParams tank;
  const TankInput v0 = voltages_for_reference(setup.schedule.y_ref.row(0), tank);
  setup.x0 = equilibrium_levels(v0, tank);
  setup.u_init_norm.resize(2);
  setup.u_init_norm << setup.model.u_scalers[0].normalize(v0.V_a),
      setup.model.u_scalers[1].normalize(v0.V_b);
  return setup;
}

int run(int argc, char** argv) {
  CLI::App app{"delta-ISS CA-NNARX identification and inverse-based control"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "pipeline config JSON");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "simulate excitation experiments");
  std::uint64_t gen_seed = 7;
  int gen_duration = 3000, gen_n_episodes = 8;
  double gen_noise = 0.05;
  std::string gen_out = "data";
  gen->add_option("--seed", gen_seed);
  gen->add_option("--duration", gen_duration, "steps per episode");
  gen->add_option("--episodes", gen_n_episodes);
  gen->add_option("--noise-sigma", gen_noise, "measurement noise, cm");
  gen->add_option("--out-dir", gen_out);

  // train
  auto* train = app.add_subcommand("train", "fit a model on generated episodes");
  std::string train_data = "data", train_out = "model.json", train_arch = "cannarx";
  std::uint64_t train_seed = 0;
  int train_epochs = -1;
  bool train_nodiss = false;
  train->add_option("--data-dir", train_data);
  train->add_option("--out", train_out);
  train->add_option("--arch", train_arch)->check(CLI::IsMember({"cannarx", "nnarx"}));
  train->add_option("--seed", train_seed);
  train->add_option("--epochs", train_epochs, "override config epochs");
  train->add_flag("--no-diss", train_nodiss, "drop the stability regularizer");

  // certify
  auto* cert_cmd = app.add_subcommand("certify", "emit a stability certificate");
  std::string cert_model = "model.json", cert_out = "certificate.json";
  int cert_samples = 100000;
  std::uint64_t cert_seed = 0;
  cert_cmd->add_option("--model", cert_model);
  cert_cmd->add_option("--out", cert_out);
  cert_cmd->add_option("--probe-samples", cert_samples);
  cert_cmd->add_option("--seed", cert_seed);

  // run-imc / run-mpc
  std::string loop_model = "model.json", loop_ref = "reference.csv", loop_out = "loop.csv";
  double loop_noise = 0.0, tau_r = 12.0, eps_tol = 1e-3;
  std::uint64_t loop_seed = 0;
  int loop_duration = 600;
  auto add_loop_flags = [&](CLI::App* cmd) {
    cmd->add_option("--model", loop_model);
    cmd->add_option("--reference", loop_ref, "CSV t,y1_ref,...");
    cmd->add_option("--out", loop_out);
    cmd->add_option("--noise-sigma", loop_noise, "measurement noise, cm");
    cmd->add_option("--seed", loop_seed);
    cmd->add_option("--duration", loop_duration, "steps");
  };
  auto* imc_cmd = app.add_subcommand("run-imc", "closed loop under the inverse law");
  add_loop_flags(imc_cmd);
  imc_cmd->add_option("--tau-r", tau_r, "filter time constant, s");
  imc_cmd->add_option("--eps-tolerance", eps_tol);

  auto* mpc_cmd = app.add_subcommand("run-mpc", "closed loop under receding horizon");
  add_loop_flags(mpc_cmd);
  FhocpConfig fhocp;
  std::vector<double> q_diag{5.0, 5.0, 5.0, 5.0}, r_diag{0.1, 0.1};
  mpc_cmd->add_option("--np", fhocp.Np);
  mpc_cmd->add_option("--q", q_diag, "output weight diagonal")->expected(4);
  mpc_cmd->add_option("--r", r_diag, "input weight diagonal")->expected(2);
  mpc_cmd->add_option("--mu-t", fhocp.mu_terminal);
  mpc_cmd->add_option("--max-iters", fhocp.max_iters);

  // compare
  auto* cmp = app.add_subcommand("compare", "tabulate two closed-loop logs");
  std::string cmp_imc = "imc.csv", cmp_mpc = "mpc.csv", cmp_out = "report";
  cmp->add_option("--imc", cmp_imc);
  cmp->add_option("--mpc", cmp_mpc);
  cmp->add_option("--out-dir", cmp_out);

  // reproduce-all
  auto* repro = app.add_subcommand("reproduce-all", "full pipeline, one seed");
  std::uint64_t repro_seed = 7;
  std::string repro_out = "out";
  repro->add_option("--seed", repro_seed);
  repro->add_option("--out", repro_out);

  app.parse(argc, argv);

  if (gen->parsed()) {
    PipelineConfig cfg = base_config(config_path);
    cfg.seed = gen_seed;
    cfg.episode_steps = gen_duration;
    cfg.n_episodes = gen_n_episodes;
    cfg.data_noise_sigma = gen_noise;
    write_episodes(gen_out, gen_episodes(cfg));
    std::cout << "wrote " << cfg.n_episodes << " episodes to " << gen_out << "\n";
    return 0;
  }

  if (train->parsed()) {
    PipelineConfig cfg = base_config(config_path);
    TrainConfig tc = cfg.train;
    tc.seed = train_seed;
    if (train_epochs > 0) tc.epochs = train_epochs;
    tc.enforce_diss = !train_nodiss;
    const Dataset dataset = make_dataset(read_episodes(train_data), cfg.dataset);
    if (train_arch == "cannarx") {
      ModelParameters model =
          init_cannarx(cfg.arch, static_cast<int>(dataset.u_scalers.size()),
                       static_cast<int>(dataset.y_scalers.size()), dataset.u_scalers,
                       dataset.y_scalers, train_seed, tc.enforce_diss);
      const TrainResult res = train_cannarx(model, tc, dataset);
      save_model(train_out, model);
      write_history_csv(std::filesystem::path(train_out).replace_extension(".history.csv"),
                        res.history);
      const EvalReport rep = evaluate(model, dataset.test, tc.washout);
      std::cout << "val_mse=" << res.best_val_mse << " nu=" << model.meta.nu_residual
                << " test_fit=" << rep.fit_overall << "\n";
    } else {
      ModelParameters ref = init_cannarx(cfg.arch, static_cast<int>(dataset.u_scalers.size()),
                                         static_cast<int>(dataset.y_scalers.size()),
                                         dataset.u_scalers, dataset.y_scalers, train_seed);
      NnarxParameters model = init_nnarx_matched(
          param_count(ref), cfg.arch.H, ref.n_u, ref.n_y, dataset.u_scalers,
          dataset.y_scalers, train_seed);
      const TrainResult res = train_nnarx(model, tc, dataset);
      save_model(train_out, model);
      write_history_csv(std::filesystem::path(train_out).replace_extension(".history.csv"),
                        res.history);
      const EvalReport rep = evaluate(model, dataset.test, tc.washout);
      std::cout << "val_mse=" << res.best_val_mse << " test_fit=" << rep.fit_overall
                << "\n";
    }
    return 0;
  }

  if (cert_cmd->parsed()) {
    if (peek_model_kind(cert_model) != "cannarx")
      throw ValidationError("certify: only control-affine models carry this certificate");
    const ModelParameters model = load_model(cert_model);
    const Certificate cert = certify(model);
    const ProbeReport probe = lyapunov_probe(model, cert, cert_samples, cert_seed);
    write_certificate_json(cert_out, cert, probe);
    std::cout << "nu=" << cert.nu << " verdict="
              << (cert.certified ? "certified" : "not-certified")
              << " probe_violations=" << probe.violations << "\n";
    return cert.certified ? 0 : 2;
  }

  if (imc_cmd->parsed()) {
    LoopSetup setup = make_loop_setup(loop_model, loop_ref);
    advise_on_feasibility(setup.model, setup.schedule);
    PipelineConfig cfg = base_config(config_path);
    Assumption3Config a3 = cfg.assumption3;
    a3.seed = loop_seed ^ 0xa3a3ull;
    const Assumption3Report eps = verify_assumption3(setup.model, a3);
    if (!eps.satisfied(eps_tol))
      throw ValidationError("run-imc: Assumption 3 violated, eps*=" +
                            std::to_string(eps.eps_star));
    const TankParams tank;
    TankLoopPlant plant(tank, setup.x0, 1.0, setup.model.u_scalers, setup.model.y_scalers,
                        loop_noise, loop_seed);
    ImcController controller(setup.model, {tau_r, 1.0, eps_tol}, eps.eps_star);
    RunConfig rc;
    rc.duration = loop_duration;
    rc.u_init_norm = setup.u_init_norm;
    write_loop_csv(loop_out, run_imc_loop(plant, controller, setup.schedule, rc));
    std::cout << "eps_star=" << eps.eps_star << " wrote " << loop_out << "\n";
    return 0;
  }

  if (mpc_cmd->parsed()) {
    LoopSetup setup = make_loop_setup(loop_model, loop_ref);
    advise_on_feasibility(setup.model, setup.schedule);
    fhocp.q_diag = Eigen::Map<const Eigen::VectorXd>(q_diag.data(),
                                                     static_cast<Eigen::Index>(q_diag.size()));
    fhocp.r_diag = Eigen::Map<const Eigen::VectorXd>(r_diag.data(),
                                                     static_cast<Eigen::Index>(r_diag.size()));
    const TankParams tank;
    TankLoopPlant plant(tank, setup.x0, 1.0, setup.model.u_scalers, setup.model.y_scalers,
                        loop_noise, loop_seed);
    RunConfig rc;
    rc.duration = loop_duration;
    rc.u_init_norm = setup.u_init_norm;
    write_loop_csv(loop_out, run_mpc_loop(plant, setup.model, fhocp, setup.schedule, rc));
    std::cout << "wrote " << loop_out << "\n";
    return 0;
  }

  if (cmp->parsed()) {
    const CompareReport report = compare_loops(read_loop_csv(cmp_imc), read_loop_csv(cmp_mpc));
    write_compare_artifacts(cmp_out, report);
    std::cout << "median latency: imc=" << report.imc_latency_median_us
              << "us mpc=" << report.mpc_latency_median_us << "us\n";
    return 0;
  }

  if (repro->parsed()) {
    PipelineConfig cfg = base_config(config_path);
    cfg.seed = repro_seed;
    cfg.out_dir = repro_out;
    const ReproduceResult result = reproduce_all(cfg);
    std::cout << "report: " << (result.out_dir / "report" / "report.md").string() << "\n"
              << "artifact index: " << (result.out_dir / "hashes.txt").string() << "\n";
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? 0 : 2;
  } catch (const cannarx::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return 3;
  }
}
