#include "yyf/simulate.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "yyf/errors.hpp"

namespace yyf {

void SimulationConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("simulation: dt must be positive");
  if (n_steps < 0) throw ConfigError("simulation: n_steps must be nonnegative");
  if (initial_cov.rows() != initial_mean.size() || initial_cov.cols() != initial_mean.size()) {
    throw ConfigError("simulation: initial_cov shape does not match initial_mean");
  }
  psd_sqrt(initial_cov);
}

Vec Trajectory::increment(int i) const {
  if (i <= 0) return Vec::Zero(observations.front().size());
  return observations[i] - observations[i - 1];
}

Mat psd_sqrt(const Mat& cov) {
  if (cov.rows() != cov.cols()) throw ConfigError("covariance must be square");
  if (cov.size() == 0) return cov;
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if (!(cov - cov.transpose()).isZero(1e-12 * scale)) {
    throw ConfigError("covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const Vec lambda = eig.eigenvalues();
  if (lambda.minCoeff() < -1e-12 * scale) {
    throw ConfigError("covariance is not positive semidefinite");
  }
  const Vec root = lambda.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

namespace {

Vec standard_normal(int n, RandomStream& rng) {
  Vec z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  return z;
}

}  // namespace

Vec sample_initial_state(const SimulationConfig& cfg, RandomStream& rng) {
  const Mat root = psd_sqrt(cfg.initial_cov);
  return cfg.initial_mean + root * standard_normal(static_cast<int>(cfg.initial_mean.size()), rng);
}

Vec euler_maruyama_step(const StateSpaceModel& model, const Vec& x, double t, double dt,
                        const Vec& std_normal) {
  const Mat q_root = psd_sqrt(model.state_noise_cov(t));
  const Vec dw = std::sqrt(dt) * (q_root * std_normal);
  return x + model.drift(x, t) * dt + model.diffusion(x, t) * dw;
}

Vec euler_maruyama_step(const StateSpaceModel& model, const Vec& x, double t, double dt,
                        RandomStream& rng) {
  return euler_maruyama_step(model, x, t, dt, standard_normal(model.dim_w, rng));
}

Trajectory simulate_path(const StateSpaceModel& model, const SimulationConfig& cfg,
                         RandomStream& rng) {
  cfg.validate();
  if (cfg.initial_mean.size() != model.dim_x) {
    throw ConfigError("simulation: initial_mean dimension does not match model");
  }
  Trajectory traj;
  traj.dt = cfg.dt;
  traj.states.reserve(cfg.n_steps + 1);
  traj.observations.reserve(cfg.n_steps + 1);
  traj.states.push_back(sample_initial_state(cfg, rng));
  traj.observations.push_back(Vec::Zero(model.dim_y));

  const double sqrt_dt = std::sqrt(cfg.dt);
  for (int i = 0; i < cfg.n_steps; ++i) {
    const double t = i * cfg.dt;
    const Vec& x = traj.states.back();
    const Vec& y = traj.observations.back();
    // Observation increment uses the left endpoint state.
    const Mat s_root = psd_sqrt(model.obs_noise_cov(t));
    const Vec dv = sqrt_dt * (s_root * standard_normal(model.dim_y, rng));
    Vec y_next = y + model.obs(x, t) * cfg.dt + dv;
    Vec x_next = euler_maruyama_step(model, x, t, cfg.dt, rng);
    traj.states.push_back(std::move(x_next));
    traj.observations.push_back(std::move(y_next));
  }
  return traj;
}

Trajectory simulate_path(const StateSpaceModel& model, const SimulationConfig& cfg) {
  RandomStream rng(cfg.seed);
  return simulate_path(model, cfg, rng);
}

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  const auto d = traj.states.front().size();
  const auto m = traj.observations.front().size();
  out << "t";
  for (Eigen::Index k = 0; k < d; ++k) out << ",x_" << k + 1;
  for (Eigen::Index k = 0; k < m; ++k) out << ",y_" << k + 1;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    out << traj.time(static_cast<int>(i));
    for (Eigen::Index k = 0; k < d; ++k) out << ',' << traj.states[i][k];
    for (Eigen::Index k = 0; k < m; ++k) out << ',' << traj.observations[i][k];
    out << '\n';
  }
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  int d = 0, m = 0;
  {
    std::stringstream header(line);
    std::string col;
    std::getline(header, col, ',');
    if (col != "t") throw FormatError(path.string() + ": first column must be 't'");
    while (std::getline(header, col, ',')) {
      if (col.rfind("x_", 0) == 0) {
        if (m > 0) throw FormatError(path.string() + ": state columns must precede observations");
        ++d;
      } else if (col.rfind("y_", 0) == 0) {
        ++m;
      } else {
        throw FormatError(path.string() + ": unexpected column '" + col + "'");
      }
    }
  }
  if (d == 0 || m == 0) throw FormatError(path.string() + ": need x_ and y_ columns");

  Trajectory traj;
  std::vector<double> times;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
    if (static_cast<int>(values.size()) != 1 + d + m) {
      throw FormatError(path.string() + ": wrong column count in row " +
                        std::to_string(times.size() + 1));
    }
    times.push_back(values[0]);
    traj.states.push_back(Eigen::Map<Vec>(values.data() + 1, d));
    traj.observations.push_back(Eigen::Map<Vec>(values.data() + 1 + d, m));
  }
  if (times.empty()) throw FormatError(path.string() + ": no rows");
  traj.dt = times.size() > 1 ? times[1] - times[0] : 0.0;
  return traj;
}

}  // namespace yyf
