#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "yyf/adam.hpp"
#include "yyf/dense_net.hpp"
#include "yyf/grid.hpp"
#include "yyf/model.hpp"
#include "yyf/rng.hpp"
#include "yyf/simulate.hpp"

namespace yyf {

/// FKE initial value problem on one observation interval
/// [t_start, t_start + dt]. The network sees the local time t - t_start and
/// represents u / output_scale.
struct FkeProblem {
  const StateSpaceModel* model = nullptr;
  DensityField initial_condition;
  double t_start = 0.0;
  double dt = 0.01;
  double output_scale = 1.0;

  const GridSpec& domain() const { return initial_condition.grid; }
};

struct PinnTrainConfig {
  double lambda_ic = 100.0;
  double lambda_bc = 10.0;
  int n_fke = 2000;
  int n_ic = 1000;
  int n_bc = 400;
  double epsilon = 1e-3;
  int max_epochs = 10000;
  /// Epoch cap for an interval trained from a fresh network; 0 means max_epochs.
  int first_max_epochs = 0;
  double learning_rate = 1e-3;
  /// Keep Adam moments across intervals along with the weights.
  bool carry_optimizer_state = true;

  void validate() const;
};

struct PinnLossParts {
  double total = 0.0;
  double fke = 0.0;
  double ic = 0.0;
  double bc = 0.0;
};

/// du/dt - (L - 1/2 h^T S^{-1} h) u for the network at absolute time t.
double fke_residual(const DenseNet& net, const FkeProblem& problem, const Vec& x, double t);

/// Collocation points for one loss evaluation.
struct CollocationSet {
  Mat fke_points;  // (d+1) x N_FKE, local time in last row
  Mat fke_second;  // d*d x N_FKE, A_ij
  Mat fke_first;   // d x N_FKE, B_j
  Vec fke_zeroth;  // C
  Mat ic_points;   // (d+1) x N_IC, local time 0
  Vec ic_targets;  // u_i / output_scale, interpolated
  Mat bc_points;   // (d+1) x N_BC
};

CollocationSet sample_collocation(const FkeProblem& problem, const PinnTrainConfig& cfg,
                                  RandomStream& rng);

struct PinnLossResult {
  PinnLossParts parts;
  Vec grad;
};

/// L = L_FKE + lambda_IC L_IC + lambda_BC L_BC on the given points, with the
/// parameter gradient.
PinnLossResult pinn_loss_and_grad(const DenseNet& net, const FkeProblem& problem,
                                  const PinnTrainConfig& cfg, const CollocationSet& points);
/// Samples fresh points from rng and evaluates the loss (no gradient).
PinnLossParts pinn_loss(const DenseNet& net, const FkeProblem& problem, const PinnTrainConfig& cfg,
                        RandomStream& rng);

struct IntervalResult {
  int epochs_used = 0;
  double final_loss = 0.0;
  std::vector<PinnLossParts> loss_history;
};

/// Adam epochs with resampled collocation points until the total loss drops
/// below epsilon or max_epochs is reached. Updates `net` in place.
/// Throws TrainingError on a non-finite loss.
IntervalResult train_interval(DenseNet& net, const FkeProblem& problem, const PinnTrainConfig& cfg,
                              RandomStream& rng, AdamState* optimizer = nullptr);

struct SnapshotPair {
  int step = 0;
  DensityField initial;
  DensityField terminal;
};

struct StepStats {
  int step = 0;
  int epochs_used = 0;
  double final_loss = 0.0;
  double wall_ms = 0.0;
};

struct StageIaResult {
  std::vector<SnapshotPair> pairs;
  std::vector<StepStats> stats;
  /// Posterior means of sigma_0 and of each terminal field, i = 0..N_T.
  std::vector<Vec> estimates;
  DenseNet net;
  std::string failure;  // empty on success
};

struct StageIaOptions {
  int hidden_layers = 4;
  int width = 40;
  /// Called after each step; may be empty.
  std::function<void(const StepStats&)> on_step;
  /// When false, a training failure ends the run early and is reported in
  /// StageIaResult::failure with the pairs completed so far.
  bool throw_on_failure = true;
  /// Network (and optimizer state) trained on the first interval elsewhere;
  /// when set, the first interval is refined with max_epochs instead of
  /// trained from Glorot initialization.
  const DenseNet* initial_net = nullptr;
  const AdamState* initial_optimizer = nullptr;
};

struct FirstInterval {
  DenseNet net;
  AdamState optimizer;
  IntervalResult result;
};

/// Trains a fresh network on the first interval from sigma_0. The result does
/// not depend on the trajectory, so it can seed run_stage_ia for many of them.
FirstInterval train_first_interval(const StateSpaceModel& model, const PinnTrainConfig& cfg,
                                   const DensityField& sigma0, double dt, RandomStream& rng,
                                   int hidden_layers = 4, int width = 40);

/// Warm-started PINN solve over every interval of a trajectory. The first
/// interval starts from sigma_0; later ones from the previous terminal field
/// updated with y(tau_{i-1}) - y(tau_{i-2}).
StageIaResult run_stage_ia(const StateSpaceModel& model, const Trajectory& trajectory,
                           const PinnTrainConfig& cfg, const DensityField& sigma0,
                           RandomStream& rng, const StageIaOptions& options = {});

/// Initial condition of interval i + 1 from the terminal field of interval i:
/// negative values clamped, then the observation update.
DensityField next_initial_condition(const DensityField& terminal, const StateSpaceModel& model,
                                    const Vec& dy, double t, UpdateStats* stats = nullptr);

/// exp(-|x|^2 / 2) on the grid.
DensityField standard_initial_density(const GridSpec& grid);

struct ArchiveManifest {
  std::string model;
  GridSpec grid;
  double dt = 0.0;
  int n_steps = 0;
  std::string config_hash;
  int pair_count = 0;
  std::string failure;  // empty on success
};

/// Directory with manifest.json, pair_NNNNN_initial.grid / _terminal.grid.
void write_snapshot_archive(const std::filesystem::path& dir, const ArchiveManifest& manifest,
                            const std::vector<SnapshotPair>& pairs);
ArchiveManifest read_archive_manifest(const std::filesystem::path& dir);
std::vector<SnapshotPair> read_snapshot_archive(const std::filesystem::path& dir,
                                                ArchiveManifest* manifest = nullptr);
/// step,epochs_used,final_loss,wall_ms
void write_step_stats_csv(const std::vector<StepStats>& stats, const std::filesystem::path& path);

}  // namespace yyf
