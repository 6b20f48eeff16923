#include "cannarx/episode.hpp"

#include <nlohmann/json.hpp>

#include "cannarx/io.hpp"

namespace cannarx {

void validate_scalers(const std::vector<Scaler>& scalers) {
  for (const auto& s : scalers)
    if (!(s.max > s.min)) throw ValidationError("scaler: max must exceed min");
}

void Episode::validate() const {
  if (u.rows() == 0) throw ValidationError("episode: empty series");
  if (u.rows() != y.rows() || u.rows() != t.size())
    throw ValidationError("episode: t/u/y length mismatch");
  if (dt <= 0.0) throw ValidationError("episode: dt must be positive");
}

namespace {

nlohmann::json scalers_to_json(const std::vector<Scaler>& scalers) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : scalers) arr.push_back({{"min", s.min}, {"max", s.max}});
  return arr;
}

std::vector<Scaler> scalers_from_json(const nlohmann::json& arr) {
  std::vector<Scaler> out;
  for (const auto& j : arr) out.push_back({j.at("min").get<double>(), j.at("max").get<double>()});
  return out;
}

}  // namespace

void save_episode(const std::filesystem::path& csv_path, const Episode& episode) {
  episode.validate();
  const int n_u = static_cast<int>(episode.u.cols());
  const int n_y = static_cast<int>(episode.y.cols());
  CsvTable table;
  table.columns.push_back("t");
  for (int i = 0; i < n_u; ++i) table.columns.push_back("u" + std::to_string(i + 1));
  for (int i = 0; i < n_y; ++i) table.columns.push_back("y" + std::to_string(i + 1));
  table.data.resize(episode.length(), 1 + n_u + n_y);
  table.data.col(0) = episode.t;
  table.data.middleCols(1, n_u) = episode.u;
  table.data.middleCols(1 + n_u, n_y) = episode.y;
  write_csv(csv_path, table);

  nlohmann::json side;
  side["dt"] = episode.dt;
  side["n_u"] = n_u;
  side["n_y"] = n_y;
  side["scalers"] = {{"u", scalers_to_json(episode.u_scalers)},
                     {"y", scalers_to_json(episode.y_scalers)}};
  side["generation"] =
      episode.meta_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(episode.meta_json);
  std::filesystem::path json_path = csv_path;
  json_path.replace_extension(".json");
  write_text_file(json_path, side.dump(2) + "\n");
}

Episode load_episode(const std::filesystem::path& csv_path) {
  const CsvTable table = read_csv(csv_path);
  std::filesystem::path json_path = csv_path;
  json_path.replace_extension(".json");
  const nlohmann::json side = nlohmann::json::parse(read_text_file(json_path));
  const int n_u = side.at("n_u").get<int>();
  const int n_y = side.at("n_y").get<int>();
  if (table.data.cols() != 1 + n_u + n_y)
    throw ValidationError("episode csv/sidecar column mismatch: " + csv_path.string());
  Episode ep;
  ep.dt = side.at("dt").get<double>();
  ep.t = table.data.col(0);
  ep.u = table.data.middleCols(1, n_u);
  ep.y = table.data.middleCols(1 + n_u, n_y);
  ep.u_scalers = scalers_from_json(side.at("scalers").at("u"));
  ep.y_scalers = scalers_from_json(side.at("scalers").at("y"));
  ep.meta_json = side.at("generation").dump();
  ep.validate();
  return ep;
}

Episode simulate_episode(const Eigen::MatrixXd& u, double dt, const TankParams& params,
                         const TankState* x0) {
  if (u.cols() != 2) throw ValidationError("simulate_episode: expected 2 input channels");
  const int T = static_cast<int>(u.rows());
  TankState state =
      x0 ? *x0 : equilibrium_levels({u(0, 0), u(0, 1)}, params);
  Episode ep;
  ep.dt = dt;
  ep.t.resize(T);
  ep.u = u;
  ep.y.resize(T, 4);
  for (int k = 0; k < T; ++k) {
    ep.t[k] = k * dt;
    for (int i = 0; i < 4; ++i) ep.y(k, i) = state.h[i];
    state = step(state, {u(k, 0), u(k, 1)}, dt, params);
  }
  return ep;
}

Episode add_output_noise(const Episode& episode, const Eigen::VectorXd& sigma,
                         std::uint64_t seed) {
  if (sigma.size() != episode.y.cols())
    throw ValidationError("add_output_noise: sigma size mismatch");
  if ((sigma.array() < 0.0).any())
    throw ValidationError("add_output_noise: sigma must be non-negative");
  Episode out = episode;
  Rng rng(seed);
  for (int k = 0; k < out.length(); ++k)
    for (int c = 0; c < out.y.cols(); ++c) {
      if (sigma[c] == 0.0) continue;
      out.y(k, c) = clamp(out.y(k, c) + gaussian(rng, 0.0, sigma[c]), 0.0, kLevelMax);
    }
  return out;
}

Eigen::MatrixXd normalize_columns(const Eigen::MatrixXd& raw, const std::vector<Scaler>& s,
                                  bool clamp_unit) {
  if (raw.cols() != static_cast<Eigen::Index>(s.size()))
    throw ValidationError("normalize: scaler count mismatch");
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c)
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      double v = s[static_cast<std::size_t>(c)].normalize(raw(r, c));
      out(r, c) = clamp_unit ? clamp(v, -1.0, 1.0) : v;
    }
  return out;
}

Eigen::MatrixXd denormalize_columns(const Eigen::MatrixXd& norm, const std::vector<Scaler>& s) {
  if (norm.cols() != static_cast<Eigen::Index>(s.size()))
    throw ValidationError("denormalize: scaler count mismatch");
  Eigen::MatrixXd out(norm.rows(), norm.cols());
  for (Eigen::Index c = 0; c < norm.cols(); ++c)
    for (Eigen::Index r = 0; r < norm.rows(); ++r)
      out(r, c) = s[static_cast<std::size_t>(c)].denormalize(norm(r, c));
  return out;
}

Eigen::MatrixXd Dataset::normalize_u(const Eigen::MatrixXd& raw) const {
  // Inputs must satisfy the unit-box assumption at inference time; the
  // clamp is a no-op for data drawn from the training level set.
  return normalize_columns(raw, u_scalers, /*clamp_unit=*/true);
}

Eigen::MatrixXd Dataset::normalize_y(const Eigen::MatrixXd& raw) const {
  return normalize_columns(raw, y_scalers, /*clamp_unit=*/false);
}

namespace {

std::vector<Scaler> fit_scalers(const std::vector<const Eigen::MatrixXd*>& blocks) {
  const Eigen::Index n_ch = blocks.front()->cols();
  std::vector<Scaler> out(static_cast<std::size_t>(n_ch));
  for (Eigen::Index c = 0; c < n_ch; ++c) {
    double lo = blocks.front()->col(c).minCoeff();
    double hi = blocks.front()->col(c).maxCoeff();
    for (const auto* b : blocks) {
      lo = std::min(lo, b->col(c).minCoeff());
      hi = std::max(hi, b->col(c).maxCoeff());
    }
    if (!(hi > lo)) throw ValidationError("dataset: constant channel, cannot normalize");
    out[static_cast<std::size_t>(c)] = {lo, hi};
  }
  return out;
}

// Evenly spaced subsequence starts over the episodes of one role.
std::vector<Subsequence> extract(const std::vector<const Episode*>& episodes,
                                 const Dataset& scaled, int T_sub, int count) {
  std::vector<Subsequence> out;
  const int n_ep = static_cast<int>(episodes.size());
  for (int i = 0; i < n_ep; ++i) {
    const int quota = count / n_ep + (i < count % n_ep ? 1 : 0);
    const Episode& ep = *episodes[static_cast<std::size_t>(i)];
    const int span = ep.length() - T_sub;
    const Eigen::MatrixXd u_norm = scaled.normalize_u(ep.u);
    const Eigen::MatrixXd y_norm = scaled.normalize_y(ep.y);
    for (int s = 0; s < quota; ++s) {
      const int start = quota == 1 ? 0 : static_cast<int>(std::llround(
          static_cast<double>(s) * span / (quota - 1)));
      out.push_back({u_norm.middleRows(start, T_sub), y_norm.middleRows(start, T_sub)});
    }
  }
  return out;
}

}  // namespace

Dataset make_dataset(const std::vector<Episode>& episodes, const DatasetConfig& config) {
  if (config.T_sub <= 0) throw ValidationError("make_dataset: T_sub must be positive");
  const int n_ep = static_cast<int>(episodes.size());
  if (config.n_test_episodes < 1 || config.n_val_episodes < 1)
    throw ValidationError("make_dataset: need at least one val and one test episode");
  const int n_train_ep = n_ep - config.n_val_episodes - config.n_test_episodes;
  if (n_train_ep < 1)
    throw ValidationError("make_dataset: split request overlaps, not enough episodes");
  for (const auto& ep : episodes) {
    ep.validate();
    if (ep.length() < config.T_sub)
      throw ValidationError("make_dataset: episode shorter than T_sub");
  }

  std::vector<const Episode*> train_eps, val_eps;
  for (int i = 0; i < n_train_ep; ++i) train_eps.push_back(&episodes[static_cast<std::size_t>(i)]);
  for (int i = n_train_ep; i < n_train_ep + config.n_val_episodes; ++i)
    val_eps.push_back(&episodes[static_cast<std::size_t>(i)]);

  Dataset ds;
  {
    std::vector<const Eigen::MatrixXd*> u_blocks, y_blocks;
    for (const auto* ep : train_eps) {
      u_blocks.push_back(&ep->u);
      y_blocks.push_back(&ep->y);
    }
    ds.u_scalers = fit_scalers(u_blocks);
    ds.y_scalers = fit_scalers(y_blocks);
  }
  ds.train = extract(train_eps, ds, config.T_sub, config.n_train);
  ds.val = extract(val_eps, ds, config.T_sub, config.n_val);
  for (int i = n_train_ep + config.n_val_episodes; i < n_ep; ++i) {
    Episode held = episodes[static_cast<std::size_t>(i)];
    held.u_scalers = ds.u_scalers;
    held.y_scalers = ds.y_scalers;
    ds.test.push_back(std::move(held));
  }
  return ds;
}

}  // namespace cannarx
