#include "yyf/pinn.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>

#include "json.hpp"
#include "yyf/errors.hpp"

namespace yyf {

void PinnTrainConfig::validate() const {
  if (n_fke < 1 || n_ic < 1 || n_bc < 1) throw ConfigError("pinn: collocation counts must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("pinn: epsilon must be positive");
  if (max_epochs < 1) throw ConfigError("pinn: max_epochs must be >= 1");
  if (first_max_epochs < 0) throw ConfigError("pinn: first_max_epochs must be >= 0");
  if (lambda_ic < 0.0 || lambda_bc < 0.0) throw ConfigError("pinn: loss weights must be nonnegative");
  if (!(learning_rate > 0.0)) throw ConfigError("pinn: learning rate must be positive");
}

double fke_residual(const DenseNet& net, const FkeProblem& problem, const Vec& x, double t) {
  const int d = static_cast<int>(x.size());
  Vec z(d + 1);
  z.head(d) = x;
  z[d] = t - problem.t_start;
  const InputDerivatives der = input_derivatives(net, z);
  const FkeCoefficients c = fke_coefficients(*problem.model, x, t);
  double rhs = c.zeroth * der.value + c.first.dot(der.du_dx);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) rhs += c.second(i, j) * der.d2u_dx2(i, j);
  return der.du_dt - rhs;
}

CollocationSet sample_collocation(const FkeProblem& problem, const PinnTrainConfig& cfg,
                                  RandomStream& rng) {
  const GridSpec& g = problem.domain();
  const int d = g.dims();
  CollocationSet s;

  s.fke_points.resize(d + 1, cfg.n_fke);
  s.fke_second.resize(d * d, cfg.n_fke);
  s.fke_first.resize(d, cfg.n_fke);
  s.fke_zeroth.resize(cfg.n_fke);
  for (int p = 0; p < cfg.n_fke; ++p) {
    for (int k = 0; k < d; ++k) s.fke_points(k, p) = rng.uniform(g.lo[k], g.hi[k]);
    s.fke_points(d, p) = rng.uniform(0.0, problem.dt);
  }
  for (int p = 0; p < cfg.n_fke; ++p) {
    const Vec x = s.fke_points.col(p).head(d);
    const FkeCoefficients c = fke_coefficients(*problem.model, x, problem.t_start + s.fke_points(d, p));
    s.fke_second.col(p) = Eigen::Map<const Vec>(c.second.data(), d * d);
    s.fke_first.col(p) = c.first;
    s.fke_zeroth[p] = c.zeroth;
  }

  s.ic_points.resize(d + 1, cfg.n_ic);
  s.ic_targets.resize(cfg.n_ic);
  const double inv_scale = 1.0 / problem.output_scale;
  for (int p = 0; p < cfg.n_ic; ++p) {
    for (int k = 0; k < d; ++k) s.ic_points(k, p) = rng.uniform(g.lo[k], g.hi[k]);
    s.ic_points(d, p) = 0.0;
    s.ic_targets[p] = interpolate(problem.initial_condition, s.ic_points.col(p).head(d)) * inv_scale;
  }

  // Faces chosen with probability proportional to their area.
  std::vector<double> face_area(d);
  double total_area = 0.0;
  for (int k = 0; k < d; ++k) {
    face_area[k] = g.volume() / (g.hi[k] - g.lo[k]);
    total_area += 2.0 * face_area[k];
  }
  s.bc_points.resize(d + 1, cfg.n_bc);
  for (int p = 0; p < cfg.n_bc; ++p) {
    double pick = rng.uniform() * total_area;
    int face = 0;
    while (face < d - 1 && pick >= 2.0 * face_area[face]) pick -= 2.0 * face_area[face++];
    const bool upper = pick >= face_area[face];
    for (int k = 0; k < d; ++k) s.bc_points(k, p) = rng.uniform(g.lo[k], g.hi[k]);
    s.bc_points(face, p) = upper ? g.hi[face] : g.lo[face];
    s.bc_points(d, p) = rng.uniform(0.0, problem.dt);
  }
  return s;
}

PinnLossResult pinn_loss_and_grad(const DenseNet& net, const FkeProblem& problem,
                                  const PinnTrainConfig& cfg, const CollocationSet& pts) {
  const int d = problem.domain().dims();
  if (net.input_dim() != d + 1) throw ConfigError("pinn: network input must be space + time");
  const JetSpec spec = JetSpec::with_hessian(d);
  const int in_dim = d + 1;
  PinnLossResult result;

  const auto n_fke = static_cast<double>(pts.fke_points.cols());
  auto fke_loss = [&](Eigen::Index first, const Mat& out, Mat& g) {
    double sum = 0.0;
    for (Eigen::Index q = 0; q < out.cols(); ++q) {
      const Eigen::Index p = first + q;
      double r = out(spec.first_channel(d), q) - pts.fke_zeroth[p] * out(0, q);
      for (int j = 0; j < d; ++j) r -= pts.fke_first(j, p) * out(spec.first_channel(j), q);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          r -= pts.fke_second(i + j * d, p) * out(spec.second_channel(in_dim, i, j), q);
      sum += r * r;
      const double gr = 2.0 * r / n_fke;
      g(spec.first_channel(d), q) += gr;
      g(0, q) -= pts.fke_zeroth[p] * gr;
      for (int j = 0; j < d; ++j) g(spec.first_channel(j), q) -= pts.fke_first(j, p) * gr;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          g(spec.second_channel(in_dim, i, j), q) -= pts.fke_second(i + j * d, p) * gr;
    }
    return sum / n_fke;
  };
  const auto n_ic = static_cast<double>(pts.ic_points.cols());
  auto ic_loss = [&](Eigen::Index first, const Mat& out, Mat& g) {
    const Eigen::RowVectorXd e = out.row(0) - pts.ic_targets.segment(first, out.cols()).transpose();
    g.row(0) = (2.0 * cfg.lambda_ic / n_ic) * e;
    return e.squaredNorm() / n_ic;
  };
  const auto n_bc = static_cast<double>(pts.bc_points.cols());
  auto bc_loss = [&](Eigen::Index, const Mat& out, Mat& g) {
    g.row(0) = (2.0 * cfg.lambda_bc / n_bc) * out.row(0);
    return out.row(0).squaredNorm() / n_bc;
  };

  LossAndGrad fke = grad_params(net, pts.fke_points, spec, fke_loss);
  LossAndGrad ic = grad_params(net, pts.ic_points, JetSpec::value_only(), ic_loss);
  LossAndGrad bc = grad_params(net, pts.bc_points, JetSpec::value_only(), bc_loss);

  result.parts.fke = fke.loss;
  result.parts.ic = ic.loss;
  result.parts.bc = bc.loss;
  result.parts.total = fke.loss + cfg.lambda_ic * ic.loss + cfg.lambda_bc * bc.loss;
  result.grad = std::move(fke.grad);
  result.grad += ic.grad;
  result.grad += bc.grad;
  return result;
}

PinnLossParts pinn_loss(const DenseNet& net, const FkeProblem& problem, const PinnTrainConfig& cfg,
                        RandomStream& rng) {
  const CollocationSet pts = sample_collocation(problem, cfg, rng);
  return pinn_loss_and_grad(net, problem, cfg, pts).parts;
}

IntervalResult train_interval(DenseNet& net, const FkeProblem& problem, const PinnTrainConfig& cfg,
                              RandomStream& rng, AdamState* optimizer) {
  cfg.validate();
  AdamState local = AdamState::for_params(net.params().size(), cfg.learning_rate);
  AdamState& adam = optimizer ? *optimizer : local;
  if (adam.first_moment.size() != net.params().size()) {
    adam = AdamState::for_params(net.params().size(), cfg.learning_rate);
  }
  adam.learning_rate = cfg.learning_rate;

  IntervalResult result;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const CollocationSet pts = sample_collocation(problem, cfg, rng);
    PinnLossResult loss = pinn_loss_and_grad(net, problem, cfg, pts);
    if (!std::isfinite(loss.parts.total)) {
      char msg[256];
      std::snprintf(msg, sizeof msg,
                    "PINN loss became non-finite at epoch %d (fke=%g ic=%g bc=%g)", epoch,
                    loss.parts.fke, loss.parts.ic, loss.parts.bc);
      throw TrainingError(msg);
    }
    adam_step(net.params(), loss.grad, adam);
    result.loss_history.push_back(loss.parts);
    result.epochs_used = epoch;
    result.final_loss = loss.parts.total;
    if (loss.parts.total < cfg.epsilon) break;
  }
  return result;
}

FirstInterval train_first_interval(const StateSpaceModel& model, const PinnTrainConfig& cfg,
                                   const DensityField& sigma0, double dt, RandomStream& rng,
                                   int hidden_layers, int width) {
  cfg.validate();
  FkeProblem problem;
  problem.model = &model;
  problem.initial_condition = sigma0;
  problem.dt = dt;
  problem.output_scale = sigma0.values.cwiseAbs().maxCoeff();
  if (!(problem.output_scale > 0.0)) throw ConfigError("stage IA: sigma_0 is identically zero");
  RandomStream init_rng = rng.split(0x1a);
  FirstInterval out;
  out.net = DenseNet::glorot(sigma0.grid.dims() + 1, hidden_layers, width, init_rng);
  out.optimizer = AdamState::for_params(out.net.params().size(), cfg.learning_rate);
  PinnTrainConfig first_cfg = cfg;
  if (cfg.first_max_epochs > 0) first_cfg.max_epochs = cfg.first_max_epochs;
  RandomStream train_rng = rng.split(0x1b);
  out.result = train_interval(out.net, problem, first_cfg, train_rng, &out.optimizer);
  return out;
}

DensityField standard_initial_density(const GridSpec& grid) {
  return DensityField::from_function(grid, [](const Vec& x) { return std::exp(-0.5 * x.squaredNorm()); });
}

DensityField next_initial_condition(const DensityField& terminal, const StateSpaceModel& model,
                                    const Vec& dy, double t, UpdateStats* stats) {
  DensityField clamped = terminal;
  clamped.values = clamped.values.cwiseMax(0.0);
  return apply_observation_update(clamped, model, dy, t, stats);
}

StageIaResult run_stage_ia(const StateSpaceModel& model, const Trajectory& trajectory,
                           const PinnTrainConfig& cfg, const DensityField& sigma0,
                           RandomStream& rng, const StageIaOptions& options) {
  cfg.validate();
  const GridSpec& grid = sigma0.grid;
  if (grid.dims() != model.dim_x) throw ConfigError("stage IA: grid dimension does not match model");
  const int n_steps = trajectory.n_steps();
  if (static_cast<int>(trajectory.observations.size()) != n_steps + 1) {
    throw ConfigError("stage IA: trajectory is missing observations");
  }

  StageIaResult out;
  AdamState adam;
  if (options.initial_net) {
    if (options.initial_net->input_dim() != grid.dims() + 1) {
      throw ConfigError("stage IA: initial network input must be space + time");
    }
    out.net = *options.initial_net;
    adam = options.initial_optimizer ? *options.initial_optimizer
                                     : AdamState::for_params(out.net.params().size(), cfg.learning_rate);
  } else {
    RandomStream init_rng = rng.split(0x1a);
    out.net = DenseNet::glorot(grid.dims() + 1, options.hidden_layers, options.width, init_rng);
    adam = AdamState::for_params(out.net.params().size(), cfg.learning_rate);
  }
  RandomStream train_rng = rng.split(0x1b);
  PinnTrainConfig first_cfg = cfg;
  if (!options.initial_net && cfg.first_max_epochs > 0) first_cfg.max_epochs = cfg.first_max_epochs;

  out.estimates.push_back(posterior_mean(sigma0));
  DensityField current = sigma0;
  for (int i = 1; i <= n_steps; ++i) {
    const double t0 = trajectory.time(i - 1);
    if (i >= 2) {
      try {
        current = next_initial_condition(out.pairs.back().terminal, model, trajectory.increment(i - 1), t0);
      } catch (const FilterDivergence& e) {
        out.failure = "stage IA step " + std::to_string(i) + ": " + e.what();
        if (options.throw_on_failure) throw;
        return out;
      }
    }
    FkeProblem problem;
    problem.model = &model;
    problem.initial_condition = current;
    problem.t_start = t0;
    problem.dt = trajectory.dt;
    problem.output_scale = current.values.cwiseAbs().maxCoeff();
    if (!(problem.output_scale > 0.0)) throw FilterDivergence("stage IA: initial condition vanished");

    const auto start = std::chrono::steady_clock::now();
    IntervalResult r;
    try {
      r = train_interval(out.net, problem, i == 1 ? first_cfg : cfg, train_rng,
                         cfg.carry_optimizer_state ? &adam : nullptr);
    } catch (const TrainingError& e) {
      out.failure = "stage IA step " + std::to_string(i) + ": " + e.what();
      if (options.throw_on_failure) throw TrainingError(out.failure);
      return out;
    }
    DensityField terminal = evaluate_net_on_grid(out.net, grid, trajectory.dt);
    terminal.values *= problem.output_scale;
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    DensityField positive = terminal;
    positive.values = positive.values.cwiseMax(0.0);
    out.estimates.push_back(posterior_mean(positive));
    out.stats.push_back({i, r.epochs_used, r.final_loss, ms});
    if (options.on_step) options.on_step(out.stats.back());
    out.pairs.push_back({i, std::move(current), std::move(terminal)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Archive

namespace {

std::string pair_file(int step, const char* which) {
  char name[64];
  std::snprintf(name, sizeof name, "pair_%05d_%s.grid", step, which);
  return name;
}

nlohmann::json grid_json(const GridSpec& g) {
  return {{"lo", g.lo}, {"hi", g.hi}, {"n", g.n}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  g.lo = j.at("lo").get<std::vector<double>>();
  g.hi = j.at("hi").get<std::vector<double>>();
  g.n = j.at("n").get<std::vector<int>>();
  g.validate();
  return g;
}

}  // namespace

void write_snapshot_archive(const std::filesystem::path& dir, const ArchiveManifest& manifest,
                            const std::vector<SnapshotPair>& pairs) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format"] = "yyf-snapshot-archive";
  j["version"] = 1;
  j["model"] = manifest.model;
  j["grid"] = grid_json(manifest.grid);
  j["dt"] = manifest.dt;
  j["n_steps"] = manifest.n_steps;
  j["config_hash"] = manifest.config_hash;
  j["pair_count"] = static_cast<int>(pairs.size());
  if (!manifest.failure.empty()) j["failure"] = manifest.failure;
  std::vector<int> steps;
  for (const auto& p : pairs) {
    write_field(p.initial, dir / pair_file(p.step, "initial"));
    write_field(p.terminal, dir / pair_file(p.step, "terminal"));
    steps.push_back(p.step);
  }
  j["steps"] = steps;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ConfigError("cannot write manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

ArchiveManifest read_archive_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("missing snapshot archive manifest in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
    ArchiveManifest m;
    if (j.at("format") != "yyf-snapshot-archive") throw FormatError("not a snapshot archive");
    m.model = j.at("model").get<std::string>();
    m.grid = grid_from_json(j.at("grid"));
    m.dt = j.at("dt").get<double>();
    m.n_steps = j.at("n_steps").get<int>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.pair_count = j.at("pair_count").get<int>();
    m.failure = j.value("failure", std::string{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  }
}

std::vector<SnapshotPair> read_snapshot_archive(const std::filesystem::path& dir,
                                                ArchiveManifest* manifest) {
  const ArchiveManifest m = read_archive_manifest(dir);
  std::ifstream in(dir / "manifest.json");
  nlohmann::json j;
  in >> j;
  std::vector<SnapshotPair> pairs;
  for (int step : j.at("steps").get<std::vector<int>>()) {
    SnapshotPair p;
    p.step = step;
    p.initial = read_field(dir / pair_file(step, "initial"));
    p.terminal = read_field(dir / pair_file(step, "terminal"));
    if (!(p.initial.grid == m.grid) || !(p.terminal.grid == m.grid)) {
      throw FormatError("snapshot grid does not match archive manifest");
    }
    pairs.push_back(std::move(p));
  }
  if (manifest) *manifest = m;
  return pairs;
}

void write_step_stats_csv(const std::vector<StepStats>& stats, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "step,epochs_used,final_loss,wall_ms\n" << std::setprecision(17);
  for (const auto& s : stats)
    out << s.step << ',' << s.epochs_used << ',' << s.final_loss << ',' << s.wall_ms << '\n';
}

}  // namespace yyf
