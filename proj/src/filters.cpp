#include "yyf/filters.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>

#include "yyf/errors.hpp"
#include "yyf/rom.hpp"

namespace yyf {

std::string to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::Yyf: return "yyf";
    case FilterKind::Ekf: return "ekf";
    case FilterKind::Pf: return "pf";
  }
  return "?";
}

FilterKind parse_filter_kind(const std::string& name) {
  if (name == "yyf") return FilterKind::Yyf;
  if (name == "ekf") return FilterKind::Ekf;
  if (name == "pf") return FilterKind::Pf;
  throw ConfigError("unknown filter '" + name + "' (expected yyf, ekf or pf)");
}

// ---------------------------------------------------------------------------

YyfState YyfState::start(const StateSpaceModel& model, const PcaBasis& basis, const RomNet& net,
                         int m_samples, const DensityField& sigma0) {
  if (!(sigma0.grid == basis.grid)) throw ConfigError("yyf: initial density grid differs from basis grid");
  if (net.coeff_dim() != basis.k()) throw ConfigError("yyf: network K differs from basis K");
  if (net.time_feature_dim() != time_feature_dim(model, m_samples)) {
    throw ConfigError("yyf: network time-feature size does not match model and M");
  }
  YyfState s;
  s.model = &model;
  s.basis = &basis;
  s.net = &net;
  s.m_samples = m_samples;
  s.values = sigma0.values;
  s.moments = moment_weights(basis.grid);
  if (model.observation_time_invariant) s.obs_weights = observation_weights(basis.grid, model, 0.0);
  return s;
}

Vec yyf_step(YyfState& s, const Vec& dy, double t_prev, double dt) {
  const GridSpec& grid = s.basis->grid;
  if (s.step > 0) {
    DensityField field{grid, std::move(s.values)};
    const Mat weights = s.obs_weights.size() > 0 ? Mat() : observation_weights(grid, *s.model, t_prev);
    field = apply_observation_update(field, s.obs_weights.size() > 0 ? s.obs_weights : weights, dy,
                                     &s.update_stats);
    s.values = std::move(field.values);
  }
  const auto start = std::chrono::steady_clock::now();
  const Vec alpha = s.basis->weighted().transpose() * s.values;
  const Vec beta = rom_forward(*s.net, alpha, time_features(*s.model, t_prev, dt, s.m_samples));
  s.values.noalias() = s.basis->components * beta;
  s.last_rom_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  s.values = s.values.cwiseMax(0.0);
  ++s.step;
  return posterior_mean(s.moments, s.values);
}

// ---------------------------------------------------------------------------

Vec ekf_step(EkfState& s, const StateSpaceModel& model, const Vec& dy, double t_prev, double dt) {
  if (!(dt > 0.0)) throw ConfigError("ekf: dt must be positive");
  const Mat f_jac = model.jac_f ? model.jac_f(s.mean, t_prev)
                                : finite_difference_jacobian(model.drift, s.mean, t_prev);
  const Mat d = model.diffusion_matrix(s.mean, t_prev);
  s.mean = s.mean + model.drift(s.mean, t_prev) * dt;
  s.cov = s.cov + (f_jac * s.cov + s.cov * f_jac.transpose() + d) * dt;

  const double t = t_prev + dt;
  const Mat h = (model.jac_h ? model.jac_h(s.mean, t) : finite_difference_jacobian(model.obs, s.mean, t)) * dt;
  const Vec innovation = dy - model.obs(s.mean, t) * dt;
  const Mat innov_cov = h * s.cov * h.transpose() + model.obs_noise_cov(t) * dt;
  const Eigen::LLT<Mat> llt(innov_cov);
  if (llt.info() != Eigen::Success || !innov_cov.allFinite()) {
    throw FilterDivergence("ekf: singular innovation covariance");
  }
  const Mat gain = llt.solve(h * s.cov).transpose();  // P H^T S^{-1}, S symmetric
  s.mean += gain * innovation;
  s.cov = s.cov - gain * h * s.cov;
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  if (!s.mean.allFinite() || !s.cov.allFinite()) throw FilterDivergence("ekf: non-finite state");
  return s.mean;
}

// ---------------------------------------------------------------------------

PfState PfState::start(const Vec& mean, const Mat& cov, int n_particles, RandomStream rng) {
  if (n_particles < 1) throw ConfigError("pf: need at least one particle");
  PfState s{Mat(mean.size(), n_particles), Vec::Constant(n_particles, 1.0 / n_particles), rng};
  const Mat root = psd_sqrt(cov);
  Vec z(mean.size());
  for (int i = 0; i < n_particles; ++i) {
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = s.rng.normal();
    s.particles.col(i) = mean + root * z;
  }
  s.last_ess = n_particles;
  return s;
}

std::vector<int> systematic_resample(const Vec& weights, double u) {
  const auto n = static_cast<int>(weights.size());
  std::vector<int> idx(static_cast<std::size_t>(n));
  double cum = weights[0];
  int j = 0;
  for (int i = 0; i < n; ++i) {
    const double target = (u + i) / n;
    while (target > cum && j < n - 1) cum += weights[++j];
    idx[static_cast<std::size_t>(i)] = j;
  }
  return idx;
}

Vec pf_step(PfState& s, const StateSpaceModel& model, const Vec& dy, double t_prev, double dt) {
  const auto n = static_cast<int>(s.particles.cols());
  for (int i = 0; i < n; ++i) {
    s.particles.col(i) = euler_maruyama_step(model, s.particles.col(i), t_prev, dt, s.rng);
  }
  const double t = t_prev + dt;
  const Eigen::LLT<Mat> noise(model.obs_noise_cov(t) * dt);
  Vec logw(n);
  for (int i = 0; i < n; ++i) {
    const Vec r = dy - model.obs(s.particles.col(i), t) * dt;
    logw[i] = std::log(s.weights[i]) - 0.5 * r.dot(noise.solve(r));
  }
  const double top = logw.maxCoeff();
  Vec w = std::isfinite(top) ? Vec((logw.array() - top).exp()) : Vec::Zero(n);
  double total = w.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    w.setConstant(1.0);
    total = n;
    ++s.degeneracy_events;
  }
  s.weights = w / total;
  s.last_ess = 1.0 / s.weights.squaredNorm();
  const Vec estimate = s.estimate();
  if (s.last_ess < 0.5 * n) {
    const auto idx = systematic_resample(s.weights, s.rng.uniform());
    Mat resampled(s.particles.rows(), n);
    for (int i = 0; i < n; ++i) resampled.col(i) = s.particles.col(idx[static_cast<std::size_t>(i)]);
    s.particles = std::move(resampled);
    s.weights.setConstant(1.0 / n);
    ++s.resamples;
  }
  return estimate;
}

// ---------------------------------------------------------------------------

Vec mse_per_component(const Mat& truth, const Mat& estimates) {
  if (truth.rows() != estimates.rows() || truth.cols() != estimates.cols() || truth.cols() == 0) {
    throw ConfigError("mse: shape mismatch");
  }
  return (truth - estimates).array().square().rowwise().mean();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

FilterOutput run_filter(const FilterSetup& setup, const Trajectory& traj) {
  if (!setup.model) throw ConfigError("run_filter: no model");
  const StateSpaceModel& model = *setup.model;
  const int n_steps = traj.n_steps();
  if (n_steps < 0 || static_cast<int>(traj.observations.size()) != n_steps + 1) {
    throw ConfigError("run_filter: incomplete trajectory");
  }
  const int d = model.dim_x;
  FilterOutput out;
  out.kind = setup.kind;
  out.dt = traj.dt;
  out.truth.resize(d, n_steps + 1);
  out.estimates.resize(d, n_steps + 1);
  for (int i = 0; i <= n_steps; ++i) out.truth.col(i) = traj.states[static_cast<std::size_t>(i)];

  YyfState yyf;
  EkfState ekf;
  PfState pf;
  switch (setup.kind) {
    case FilterKind::Yyf:
      if (!setup.basis || !setup.rom) throw ConfigError("run_filter: yyf needs a ROM bundle");
      yyf = YyfState::start(model, *setup.basis, *setup.rom, setup.m_samples, setup.sigma0);
      out.estimates.col(0) = posterior_mean(yyf.moments, yyf.values);
      break;
    case FilterKind::Ekf:
      ekf = {setup.initial_mean, setup.initial_cov};
      out.estimates.col(0) = ekf.mean;
      break;
    case FilterKind::Pf:
      pf = PfState::start(setup.initial_mean, setup.initial_cov, setup.pf_particles,
                          RandomStream(setup.pf_seed));
      out.estimates.col(0) = pf.estimate();
      break;
  }

  for (int i = 1; i <= n_steps; ++i) {
    const double t_prev = traj.time(i - 1);
    const auto start = std::chrono::steady_clock::now();
    Vec est;
    try {
      switch (setup.kind) {
        case FilterKind::Yyf: est = yyf_step(yyf, traj.increment(i - 1), t_prev, traj.dt); break;
        case FilterKind::Ekf: est = ekf_step(ekf, model, traj.increment(i), t_prev, traj.dt); break;
        case FilterKind::Pf: est = pf_step(pf, model, traj.increment(i), t_prev, traj.dt); break;
      }
    } catch (const FilterDivergence& e) {
      throw FilterDivergence(to_string(setup.kind) + " step " + std::to_string(i) + ": " + e.what());
    }
    out.wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    if (setup.kind == FilterKind::Yyf) out.rom_ms.push_back(yyf.last_rom_ms);
    out.estimates.col(i) = est;
  }
  out.mse = mse_per_component(out.truth, out.estimates);
  out.degeneracy_events = pf.degeneracy_events;
  out.clamped_exponents = yyf.update_stats.clamped_exponents;
  return out;
}

void write_filter_csv(const FilterOutput& out, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  const auto d = out.truth.rows();
  f << "step,t";
  for (Eigen::Index k = 1; k <= d; ++k) f << ",x_true_" << k;
  for (Eigen::Index k = 1; k <= d; ++k) f << ",x_hat_" << k;
  f << ",wall_ms\n" << std::setprecision(17);
  for (int i = 0; i <= out.n_steps(); ++i) {
    f << i << ',' << i * out.dt;
    for (Eigen::Index k = 0; k < d; ++k) f << ',' << out.truth(k, i);
    for (Eigen::Index k = 0; k < d; ++k) f << ',' << out.estimates(k, i);
    f << ',' << (i == 0 ? 0.0 : out.wall_ms[static_cast<std::size_t>(i - 1)]) << '\n';
  }
}

}  // namespace yyf
