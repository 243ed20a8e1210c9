#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "yyf/linalg.hpp"
#include "yyf/model.hpp"
#include "yyf/rng.hpp"

namespace yyf {

struct SimulationConfig {
  double dt = 0.01;
  int n_steps = 1;
  std::uint64_t seed = 0;
  Vec initial_mean;
  Mat initial_cov;

  /// Throws ConfigError on dt <= 0, n_steps < 0 or a malformed covariance.
  void validate() const;
};

/// States x(tau_i) and cumulative observations y(tau_i), i = 0..n_steps.
struct Trajectory {
  double dt = 0.0;
  std::vector<Vec> states;
  std::vector<Vec> observations;

  int n_steps() const { return static_cast<int>(states.size()) - 1; }
  double time(int i) const { return i * dt; }
  /// y(tau_i) - y(tau_{i-1}); zero vector for i <= 0.
  Vec increment(int i) const;
};

/// Symmetric square root of a PSD covariance; throws ConfigError if the
/// matrix is not symmetric positive semidefinite.
Mat psd_sqrt(const Mat& cov);

Vec sample_initial_state(const SimulationConfig& cfg, RandomStream& rng);

/// One Euler-Maruyama step with a caller-supplied standard normal draw.
Vec euler_maruyama_step(const StateSpaceModel& model, const Vec& x, double t, double dt,
                        const Vec& std_normal);
Vec euler_maruyama_step(const StateSpaceModel& model, const Vec& x, double t, double dt,
                        RandomStream& rng);

Trajectory simulate_path(const StateSpaceModel& model, const SimulationConfig& cfg,
                         RandomStream& rng);
/// Uses a stream seeded from cfg.seed.
Trajectory simulate_path(const StateSpaceModel& model, const SimulationConfig& cfg);

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);
Trajectory read_trajectory_csv(const std::filesystem::path& path);

}  // namespace yyf
