#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "yyf/grid.hpp"
#include "yyf/model.hpp"
#include "yyf/pca.hpp"
#include "yyf/rng.hpp"
#include "yyf/rom_net.hpp"
#include "yyf/simulate.hpp"

namespace yyf {

enum class FilterKind { Yyf, Ekf, Pf };

std::string to_string(FilterKind kind);
/// "yyf", "ekf" or "pf"; throws ConfigError otherwise.
FilterKind parse_filter_kind(const std::string& name);

// ---------------------------------------------------------------------------
// Yau-Yau filter driven by the reduced-order solver.

struct YyfState {
  const StateSpaceModel* model = nullptr;
  const PcaBasis* basis = nullptr;
  const RomNet* net = nullptr;
  int m_samples = 4;
  Vec values;  // current density at the interval start, before the update
  int step = 0;
  Mat obs_weights;  // cached S^{-1} h per node for time-invariant sensors
  Mat moments;
  UpdateStats update_stats;
  double last_rom_ms = 0.0;  // projection + network + reconstruction only

  static YyfState start(const StateSpaceModel& model, const PcaBasis& basis, const RomNet& net,
                        int m_samples, const DensityField& sigma0);
};

/// One interval [t_prev, t_prev + dt]. `dy` is y(t_prev) - y(t_prev - dt); it
/// is ignored on the first step, which starts from the unmodified sigma0.
/// Returns the posterior mean of the clamped terminal density.
Vec yyf_step(YyfState& state, const Vec& dy, double t_prev, double dt);

// ---------------------------------------------------------------------------
// Extended Kalman filter, continuous-discrete.

struct EkfState {
  Vec mean;
  Mat cov;
};

/// Euler prediction over [t_prev, t_prev + dt], then a Kalman update with the
/// increment dy = y(t_prev + dt) - y(t_prev) as measurement of h dt with
/// noise S dt. Throws FilterDivergence on a singular innovation covariance.
Vec ekf_step(EkfState& state, const StateSpaceModel& model, const Vec& dy, double t_prev, double dt);

// ---------------------------------------------------------------------------
// Bootstrap particle filter.

struct PfState {
  Mat particles;  // d x N
  Vec weights;
  RandomStream rng;
  std::int64_t resamples = 0;
  std::int64_t degeneracy_events = 0;
  double last_ess = 0.0;

  static PfState start(const Vec& mean, const Mat& cov, int n_particles, RandomStream rng);
  Vec estimate() const { return particles * weights; }
};

/// Propagates every particle by Euler-Maruyama, reweights by the Gaussian
/// likelihood N(dy; h dt, S dt), resamples systematically when ESS < N/2.
/// If every weight underflows, weights are reset to uniform and
/// degeneracy_events is incremented.
Vec pf_step(PfState& state, const StateSpaceModel& model, const Vec& dy, double t_prev, double dt);

/// Systematic resampling indices for normalized weights and offset u in [0, 1).
std::vector<int> systematic_resample(const Vec& weights, double u);

// ---------------------------------------------------------------------------

struct FilterSetup {
  FilterKind kind = FilterKind::Ekf;
  const StateSpaceModel* model = nullptr;
  Vec initial_mean;
  Mat initial_cov;
  int pf_particles = 100;
  std::uint64_t pf_seed = 0;
  // yyf only
  const PcaBasis* basis = nullptr;
  const RomNet* rom = nullptr;
  int m_samples = 4;
  DensityField sigma0;
};

struct FilterOutput {
  FilterKind kind = FilterKind::Ekf;
  Mat truth;      // d x (N_T + 1)
  Mat estimates;  // d x (N_T + 1)
  double dt = 0.0;
  std::vector<double> wall_ms;  // per step i = 1..N_T
  std::vector<double> rom_ms;   // yyf only
  Vec mse;
  std::int64_t degeneracy_events = 0;
  std::int64_t clamped_exponents = 0;

  int n_steps() const { return static_cast<int>(truth.cols()) - 1; }
};

/// MSE_l = 1/(N_T + 1) sum_i (x_l(tau_i) - xhat_l(tau_i))^2.
Vec mse_per_component(const Mat& truth, const Mat& estimates);

/// Runs one filter over the whole trajectory. Step errors are rethrown with
/// the step index.
FilterOutput run_filter(const FilterSetup& setup, const Trajectory& trajectory);

double median(std::vector<double> v);
double mean(const std::vector<double>& v);

/// CSV: step,t,x_true_1..d,x_hat_1..d,wall_ms.
void write_filter_csv(const FilterOutput& out, const std::filesystem::path& path);

}  // namespace yyf
