#include <cmath>
#include <limits>

#include "doctest.h"
#include "support.hpp"
#include "yyf/errors.hpp"
#include "yyf/pinn.hpp"

using namespace yyf;

namespace {

FkeProblem problem_for(const StateSpaceModel& m, const GridSpec& g, double t_start = 0.0) {
  FkeProblem p;
  p.model = &m;
  p.initial_condition = standard_initial_density(g);
  p.t_start = t_start;
  p.dt = 0.01;
  return p;
}

PinnTrainConfig small_config() {
  PinnTrainConfig c;
  c.n_fke = 300;
  c.n_ic = 150;
  c.n_bc = 60;
  return c;
}

StateSpaceModel heat_model() {
  return make_linear_gaussian(Mat::Zero(2, 2), Mat::Identity(2, 2), Mat::Zero(2, 2), Mat::Identity(2, 2),
                              Mat::Identity(2, 2));
}

Trajectory still_trajectory(int n_steps) {
  Trajectory t;
  t.dt = 0.01;
  for (int i = 0; i <= n_steps; ++i) {
    t.states.push_back(Vec::Zero(2));
    t.observations.push_back(Vec::Constant(2, 0.01 * i));
  }
  return t;
}

// du/dt - [1/2 sum d_i d_j (D_ij u) - sum d_i (f_i u) - 1/2 h^T S^-1 h u] with
// every derivative of the network product taken by central differences.
double residual_by_differences(const DenseNet& net, const StateSpaceModel& m, const Vec& x, double t_local,
                               double t_start) {
  const double h = 1e-3;
  const double t = t_start + t_local;
  auto u = [&](const Vec& p, double s) {
    Vec z(3);
    z << p, s;
    return forward(net, z);
  };
  double second = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      auto g = [&](Vec p) { return m.diffusion_matrix(p, t)(i, j) * u(p, t_local); };
      Vec pp = x, pm = x, mp = x, mm = x;
      pp[i] += h; pp[j] += h;
      pm[i] += h; pm[j] -= h;
      mp[i] -= h; mp[j] += h;
      mm[i] -= h; mm[j] -= h;
      second += (g(pp) - g(pm) - g(mp) + g(mm)) / (4 * h * h);
    }
  double first = 0.0;
  for (int i = 0; i < 2; ++i) {
    Vec p = x, q = x;
    p[i] += h;
    q[i] -= h;
    first += (m.drift(p, t)[i] * u(p, t_local) - m.drift(q, t)[i] * u(q, t_local)) / (2 * h);
  }
  const double ut = (u(x, t_local + h) - u(x, t_local - h)) / (2 * h);
  return ut - (0.5 * second - first - 0.5 * m.killing_rate(x, t) * u(x, t_local));
}

}  // namespace

TEST_CASE("FKE residual") {
  const GridSpec g = GridSpec::uniform(2, -2.2, 2.2, 20);
  SUBCASE("zero network") {
    for (const auto& name : example_names()) {
      const StateSpaceModel m = make_example(name);
      const FkeProblem p = problem_for(m, g);
      CHECK(fke_residual(DenseNet(3, 4, 40), p, (Vec(2) << 0.3, -1.0).finished(), 0.004) == 0.0);
    }
  }
  SUBCASE("constant network sees only the zeroth-order term") {
    const StateSpaceModel ex1 = make_example("example1");
    const FkeProblem p = problem_for(ex1, g);
    DenseNet c(3, 1, 2);
    c.bias(1)[0] = 2.0;
    // At (1, 1): -div f = 1 and the killing term -1/2 (1 + 1) u = -u cancel.
    CHECK(ex1.killing_rate(Vec::Ones(2), 0.0) / 2 == doctest::Approx(1.0));
    CHECK(std::abs(fke_residual(c, p, Vec::Ones(2), 0.0)) <= 1e-14);
    const Vec x = (Vec(2) << 0.5, 0.0).finished();
    CHECK(fke_residual(c, p, x, 0.0) == doctest::Approx(-2.0 * (1.0 - 0.5 * std::pow(0.5, 6))));
  }
  SUBCASE("random networks against the divergence form") {
    RandomStream rng(1);
    for (const auto& name : example_names()) {
      const StateSpaceModel m = make_example(name);
      const double t_start = 0.37;
      const FkeProblem p = problem_for(m, g, t_start);
      const DenseNet net = DenseNet::glorot(3, 3, 20, rng);
      for (int k = 0; k < 10; ++k) {
        const Vec x = (Vec(2) << rng.uniform(-2, 2), rng.uniform(-2, 2)).finished();
        const double tl = rng.uniform(0, 0.01);
        const double ref = residual_by_differences(net, m, x, tl, t_start);
        CHECK(std::abs(fke_residual(net, p, x, t_start + tl) - ref) <= 1e-5 * std::max(1.0, std::abs(ref)));
      }
    }
  }
}

TEST_CASE("PINN loss") {
  const StateSpaceModel ex1 = make_example("example1");
  const GridSpec g = GridSpec::uniform(2, -2.2, 2.2, 20);
  SUBCASE("zero network with zero initial condition") {
    FkeProblem p = problem_for(ex1, g);
    p.initial_condition = DensityField::zeros(g);
    RandomStream rng(1);
    const PinnLossParts parts = pinn_loss(DenseNet(3, 2, 8), p, small_config(), rng);
    CHECK(parts.total == 0.0);
  }
  SUBCASE("zero weights leave the residual term") {
    const FkeProblem p = problem_for(ex1, g);
    PinnTrainConfig c = small_config();
    c.lambda_ic = c.lambda_bc = 0.0;
    RandomStream rng(2), init(3);
    const PinnLossParts parts = pinn_loss(DenseNet::glorot(3, 2, 8, init), p, c, rng);
    CHECK(parts.ic > 0.0);
    CHECK(parts.total == parts.fke);
  }
  SUBCASE("seeded evaluation is reproducible") {
    const FkeProblem p = problem_for(ex1, g);
    RandomStream init(4);
    const DenseNet net = DenseNet::glorot(3, 4, 40, init);
    RandomStream a(5), b(5);
    const PinnLossParts x = pinn_loss(net, p, small_config(), a);
    const PinnLossParts y = pinn_loss(net, p, small_config(), b);
    CHECK(x.total == y.total);
    CHECK(x.fke == y.fke);
  }
  SUBCASE("collocation geometry") {
    const FkeProblem p = problem_for(ex1, g, 0.2);
    RandomStream rng(6);
    const CollocationSet s = sample_collocation(p, small_config(), rng);
    CHECK(s.fke_points.row(2).minCoeff() >= 0.0);
    CHECK(s.fke_points.row(2).maxCoeff() <= 0.01);
    CHECK(s.ic_points.row(2).isZero(0.0));
    for (Eigen::Index j = 0; j < s.bc_points.cols(); ++j) {
      const double m = std::max(std::abs(s.bc_points(0, j)), std::abs(s.bc_points(1, j)));
      CHECK(m == doctest::Approx(2.2).epsilon(1e-15));
    }
  }
}

TEST_CASE("interval training") {
  const StateSpaceModel ex1 = make_example("example1");
  const GridSpec g = GridSpec::uniform(2, -2.2, 2.2, 20);
  SUBCASE("infinite threshold stops after one epoch") {
    PinnTrainConfig c = small_config();
    c.epsilon = std::numeric_limits<double>::infinity();
    RandomStream rng(1), init(2);
    DenseNet net = DenseNet::glorot(3, 2, 8, init);
    const IntervalResult r = train_interval(net, problem_for(ex1, g), c, rng);
    CHECK(r.epochs_used == 1);
    CHECK(r.loss_history.size() == 1);
  }
  SUBCASE("non-finite loss") {
    FkeProblem p = problem_for(ex1, g);
    p.initial_condition.values.setConstant(std::nan(""));
    RandomStream rng(3), init(4);
    DenseNet net = DenseNet::glorot(3, 2, 8, init);
    CHECK_THROWS_AS(train_interval(net, p, small_config(), rng), TrainingError);
  }
  SUBCASE("bad configuration") {
    PinnTrainConfig c = small_config();
    c.n_bc = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.epsilon = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_CASE("pure diffusion over one interval matches the oracle") {
  const StateSpaceModel heat = heat_model();
  const GridSpec g = GridSpec::uniform(2, -2.2, 2.2, 50);
  PinnTrainConfig c;
  c.n_fke = 500;
  c.n_ic = 500;
  c.n_bc = 200;
  c.epsilon = 1e-4;
  c.first_max_epochs = 3000;
  RandomStream rng(7);
  const StageIaResult r = run_stage_ia(heat, still_trajectory(1), c, standard_initial_density(g), rng);
  REQUIRE(r.pairs.size() == 1);
  const DensityField fd = fd_fke_step(r.pairs[0].initial, heat, 0.0, 0.01);
  CHECK(relative_l2(r.pairs[0].terminal, fd) <= 5e-2);
}

TEST_CASE("stage IA bookkeeping") {
  const StateSpaceModel ex1 = make_example("example1");
  const GridSpec g = GridSpec::uniform(2, -2.2, 2.2, 20);
  const DensityField sigma0 = standard_initial_density(g);
  CHECK(sigma0.values[g.flat_index({10, 3})] == std::exp(-0.5 * g.node(g.flat_index({10, 3})).squaredNorm()));

  PinnTrainConfig c = small_config();
  c.epsilon = std::numeric_limits<double>::infinity();
  const Trajectory traj = still_trajectory(4);
  RandomStream rng(8);
  std::vector<int> seen;
  StageIaOptions opt;
  opt.hidden_layers = 2;
  opt.width = 8;
  opt.on_step = [&](const StepStats& s) { seen.push_back(s.step); };
  const StageIaResult r = run_stage_ia(ex1, traj, c, sigma0, rng, opt);
  REQUIRE(r.pairs.size() == 4);
  CHECK(seen == std::vector<int>{1, 2, 3, 4});
  CHECK(r.estimates.size() == 5);
  CHECK(r.estimates[0] == posterior_mean(sigma0));
  CHECK(r.pairs[0].initial.values == sigma0.values);
  // Later initial conditions are the updated previous terminal fields.
  const DensityField expect = next_initial_condition(r.pairs[1].terminal, ex1, traj.increment(2), 0.02);
  CHECK(r.pairs[2].initial.values == expect.values);

  testing::TempDir dir;
  ArchiveManifest m;
  m.model = "example1";
  m.grid = g;
  m.dt = 0.01;
  m.n_steps = 4;
  m.config_hash = "0123456789abcdef";
  m.pair_count = 4;
  write_snapshot_archive(dir.path(), m, r.pairs);
  write_step_stats_csv(r.stats, dir / "steps.csv");
  ArchiveManifest back;
  const auto pairs = read_snapshot_archive(dir.path(), &back);
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.grid == g);
  REQUIRE(pairs.size() == 4);
  CHECK(pairs[3].step == 4);
  CHECK(pairs[3].terminal.values == r.pairs[3].terminal.values);
  CHECK_THROWS_AS(read_snapshot_archive(dir / "nothing"), FormatError);
}

TEST_CASE("shared first interval") {
  const StateSpaceModel ex1 = make_example("example1");
  const GridSpec g = GridSpec::uniform(2, -2.2, 2.2, 20);
  const DensityField sigma0 = standard_initial_density(g);
  PinnTrainConfig c = small_config();
  c.epsilon = 1e-12;
  c.max_epochs = 3;
  c.first_max_epochs = 20;
  RandomStream rng(9);
  const FirstInterval first = train_first_interval(ex1, c, sigma0, 0.01, rng, 2, 8);
  CHECK(first.result.epochs_used == 20);
  CHECK(first.optimizer.step == 20);

  StageIaOptions opt;
  opt.initial_net = &first.net;
  opt.initial_optimizer = &first.optimizer;
  RandomStream a(10);
  const StageIaResult warm = run_stage_ia(ex1, still_trajectory(2), c, sigma0, a, opt);
  CHECK(warm.stats[0].epochs_used == 3);
  CHECK(warm.net.same_shape(first.net));

  RandomStream b(10);
  const StageIaResult cold = run_stage_ia(ex1, still_trajectory(2), c, sigma0, b, StageIaOptions{2, 8});
  CHECK(cold.stats[0].epochs_used == 20);
  CHECK(cold.stats[1].epochs_used == 3);
}

TEST_CASE("warm start needs fewer epochs than the first interval") {
  const StateSpaceModel ex1 = make_example("example1");
  const GridSpec g = GridSpec::uniform(2, -2.2, 2.2, 30);
  PinnTrainConfig c = small_config();
  c.epsilon = 0.5;
  c.max_epochs = 4000;
  RandomStream rng(11);
  const StageIaResult r = run_stage_ia(ex1, still_trajectory(3), c, standard_initial_density(g), rng);
  REQUIRE(r.stats.size() == 3);
  CHECK(r.stats[0].final_loss < c.epsilon);
  CHECK(r.stats[1].epochs_used < r.stats[0].epochs_used);
  CHECK(r.stats[2].epochs_used < r.stats[0].epochs_used);
}
