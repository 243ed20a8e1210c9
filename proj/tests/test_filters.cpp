#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "support.hpp"
#include "yyf/errors.hpp"
#include "yyf/filters.hpp"
#include "yyf/pinn.hpp"
#include "yyf/rom.hpp"

using namespace yyf;

namespace {

struct Linear {
  Mat a, g, h, q, s;
  StateSpaceModel model;
  Linear() {
    a.resize(2, 2);
    a << -0.5, 0.2, 0.0, -0.3;
    g = 0.8 * Mat::Identity(2, 2);
    h.resize(2, 2);
    h << 1.0, 0.0, 0.5, 1.0;
    q = Mat::Identity(2, 2);
    s = 0.5 * Mat::Identity(2, 2);
    model = make_linear_gaussian(a, g, h, q, s);
  }
};

Trajectory simulate(const StateSpaceModel& m, int n_steps, std::uint64_t seed, double var = 0.2) {
  SimulationConfig c;
  c.dt = 0.01;
  c.n_steps = n_steps;
  c.seed = seed;
  c.initial_mean = Vec::Zero(m.dim_x);
  c.initial_cov = var * Mat::Identity(m.dim_x, m.dim_x);
  return simulate_path(m, c);
}

// Textbook Kalman filter on the Euler-discretized linear system, written
// independently: explicit inverse and Joseph-form covariance update.
struct Kalman {
  Vec m;
  Mat p;
  void step(const Linear& l, const Vec& dy, double dt, bool continuous_prediction) {
    const Mat d = l.g * l.q * l.g.transpose();
    if (continuous_prediction) {
      p = p + (l.a * p + p * l.a.transpose() + d) * dt;
    } else {
      const Mat f = Mat::Identity(2, 2) + l.a * dt;
      p = f * p * f.transpose() + d * dt;
    }
    m = m + l.a * m * dt;
    const Mat hd = l.h * dt;
    const Mat r = l.s * dt;
    const Mat k = p * hd.transpose() * (hd * p * hd.transpose() + r).inverse();
    m = m + k * (dy - hd * m);
    const Mat i_kh = Mat::Identity(2, 2) - k * hd;
    p = i_kh * p * i_kh.transpose() + k * r * k.transpose();
  }
};

}  // namespace

TEST_CASE("filter names") {
  CHECK(parse_filter_kind("yyf") == FilterKind::Yyf);
  CHECK(to_string(FilterKind::Pf) == "pf");
  CHECK_THROWS_AS(parse_filter_kind("ukf"), ConfigError);
}

TEST_CASE("EKF on a linear system is the Kalman filter") {
  const Linear l;
  const Trajectory traj = simulate(l.model, 100, 1);
  EkfState ekf{Vec::Zero(2), 0.2 * Mat::Identity(2, 2)};
  Kalman kf{Vec::Zero(2), 0.2 * Mat::Identity(2, 2)};
  for (int i = 1; i <= 100; ++i) {
    ekf_step(ekf, l.model, traj.increment(i), traj.time(i - 1), traj.dt);
    kf.step(l, traj.increment(i), traj.dt, true);
    CHECK((ekf.mean - kf.m).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((ekf.cov - kf.p).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((ekf.cov - ekf.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("EKF innovation shrinks as observation noise vanishes") {
  Linear l;
  l.s = 1e-8 * Mat::Identity(2, 2);
  l.model = make_linear_gaussian(l.a, l.g, l.h, l.q, l.s);
  const Trajectory traj = simulate(l.model, 30, 2);
  EkfState ekf{Vec::Zero(2), Mat::Identity(2, 2)};
  double prev_trace = ekf.cov.trace();
  for (int i = 1; i <= 30; ++i) {
    ekf_step(ekf, l.model, traj.increment(i), traj.time(i - 1), traj.dt);
    CHECK(ekf.cov.trace() <= prev_trace * (1 + 1e-9));
    prev_trace = ekf.cov.trace();
  }
  // The mean solves H m dt ~ dy, the least-squares reading of the last increment.
  const Vec ls = (l.h * traj.dt).colPivHouseholderQr().solve(traj.increment(30));
  CHECK((ekf.mean - ls).norm() < 0.05 * std::max(1.0, ls.norm()));
}

TEST_CASE("PF tracks the Kalman posterior mean") {
  const Linear l;
  const Trajectory traj = simulate(l.model, 100, 3);
  const int n = 10000;
  PfState pf = PfState::start(Vec::Zero(2), 0.2 * Mat::Identity(2, 2), n, RandomStream(4));
  Kalman kf{Vec::Zero(2), 0.2 * Mat::Identity(2, 2)};
  int outside = 0;
  for (int i = 1; i <= 100; ++i) {
    const Vec est = pf_step(pf, l.model, traj.increment(i), traj.time(i - 1), traj.dt);
    kf.step(l, traj.increment(i), traj.dt, false);
    for (int k = 0; k < 2; ++k) outside += std::abs(est[k] - kf.m[k]) > 3.0 * std::sqrt(kf.p(k, k) / n);
    CHECK(std::abs(pf.weights.sum() - 1.0) <= 1e-12);
    CHECK(pf.last_ess > 0.0);
    CHECK(pf.last_ess <= n * (1 + 1e-12));
  }
  CHECK(outside <= 2);
}

TEST_CASE("PF collapses onto an exactly observed particle") {
  const StateSpaceModel m = make_linear_gaussian(Mat::Zero(2, 2), Mat::Zero(2, 2), Mat::Identity(2, 2),
                                                 Mat::Identity(2, 2), 1e-6 * Mat::Identity(2, 2));
  PfState pf = PfState::start(Vec::Zero(2), Mat::Identity(2, 2), 200, RandomStream(5));
  const Vec target = pf.particles.col(17);
  const Vec est = pf_step(pf, m, target * 0.01, 0.0, 0.01);
  CHECK((est - target).norm() < 1e-6);
  CHECK(pf.resamples == 1);
}

TEST_CASE("PF weight underflow resets to uniform") {
  const StateSpaceModel m = make_linear_gaussian(Mat::Zero(2, 2), Mat::Zero(2, 2), Mat::Identity(2, 2),
                                                 Mat::Identity(2, 2), Mat::Identity(2, 2));
  PfState pf = PfState::start(Vec::Zero(2), Mat::Identity(2, 2), 50, RandomStream(6));
  const Vec est = pf_step(pf, m, Vec::Constant(2, std::numeric_limits<double>::infinity()), 0.0, 0.01);
  CHECK(pf.degeneracy_events == 1);
  CHECK(est.allFinite());
}

TEST_CASE("systematic resampling") {
  CHECK(systematic_resample((Vec(2) << 0.5, 0.5).finished(), 0.25) == std::vector<int>{0, 1});
  CHECK(systematic_resample((Vec(3) << 1.0, 0.0, 0.0).finished(), 0.9) == std::vector<int>{0, 0, 0});
  const Vec w = (Vec(4) << 0.1, 0.2, 0.3, 0.4).finished();
  RandomStream rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto idx = systematic_resample(w, rng.uniform());
    std::vector<int> counts(4, 0);
    for (int i : idx) counts[i]++;
    for (int k = 0; k < 4; ++k) {
      CHECK(counts[k] >= std::floor(4 * w[k]));
      CHECK(counts[k] <= std::ceil(4 * w[k]));
    }
  }
}

TEST_CASE("Yau-Yau filter step") {
  const StateSpaceModel ex1 = make_example("example1");
  const GridSpec g = GridSpec::uniform(2, -2.2, 2.2, 30);
  const DensityField sigma0 = standard_initial_density(g);
  std::vector<DensityField> snaps{sigma0};
  for (double c : {-1.0, -0.5, 0.5, 1.0}) {
    snaps.push_back(DensityField::from_function(g, [&](const Vec& x) {
      return std::exp(-0.5 * ((x[0] - c) * (x[0] - c) + (x[1] + 0.5 * c) * (x[1] + 0.5 * c)) / 0.3);
    }));
  }
  const PcaBasis basis = fit_pca(snaps, {5, 0.99});
  const RomNet identity(5, 0, 2, 8);

  SUBCASE("identity ROM without observation") {
    YyfState s = YyfState::start(ex1, basis, identity, 4, sigma0);
    const Vec est = yyf_step(s, Vec::Zero(2), 0.0, 0.01);
    CHECK((est - posterior_mean(sigma0)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(s.step == 1);
  }
  SUBCASE("estimate ignores the scale of the field") {
    RandomStream rng(8);
    const RomNet net = RomNet::glorot(5, 0, rng, 2, 8);
    YyfState a = YyfState::start(ex1, basis, net, 4, sigma0);
    YyfState b = YyfState::start(ex1, basis, net, 4, sigma0);
    yyf_step(a, Vec::Zero(2), 0.0, 0.01);
    yyf_step(b, Vec::Zero(2), 0.0, 0.01);
    b.values *= 37.5;
    const Vec dy = (Vec(2) << 0.03, -0.01).finished();
    const Vec ea = yyf_step(a, dy, 0.01, 0.01);
    const Vec eb = yyf_step(b, dy, 0.01, 0.01);
    CHECK((ea - eb).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("bundle shape checks") {
    CHECK_THROWS_AS(YyfState::start(ex1, basis, RomNet(4, 0, 1, 4), 4, sigma0), ConfigError);
    CHECK_THROWS_AS(YyfState::start(make_example("example2"), basis, identity, 4, sigma0), ConfigError);
  }
  SUBCASE("whole runs") {
    const Trajectory traj = simulate(ex1, 20, 9);
    FilterSetup setup;
    setup.kind = FilterKind::Yyf;
    setup.model = &ex1;
    setup.initial_mean = Vec::Zero(2);
    setup.initial_cov = 0.2 * Mat::Identity(2, 2);
    setup.basis = &basis;
    setup.rom = &identity;
    setup.sigma0 = sigma0;
    const FilterOutput a = run_filter(setup, traj), b = run_filter(setup, traj);
    CHECK(a.estimates == b.estimates);
    CHECK(a.wall_ms.size() == 20);
    CHECK(a.rom_ms.size() == 20);
    CHECK(a.mse.size() == 2);
    CHECK((a.estimates.col(0) - posterior_mean(sigma0)).norm() <= 1e-12);
    for (FilterKind k : {FilterKind::Ekf, FilterKind::Pf}) {
      setup.kind = k;
      const FilterOutput x = run_filter(setup, traj), y = run_filter(setup, traj);
      CHECK(x.estimates == y.estimates);
      CHECK(x.estimates.col(0).norm() < 0.2);
    }
  }
}

TEST_CASE("filter output bookkeeping") {
  const StateSpaceModel ex1 = make_example("example1");
  const Trajectory traj = simulate(ex1, 0, 10);
  FilterSetup setup;
  setup.kind = FilterKind::Ekf;
  setup.model = &ex1;
  setup.initial_mean = Vec::Zero(2);
  setup.initial_cov = 0.2 * Mat::Identity(2, 2);
  const FilterOutput out = run_filter(setup, traj);
  CHECK(out.estimates.cols() == 1);
  CHECK(out.mse == traj.states[0].cwiseProduct(traj.states[0]));

  const Mat truth = Mat::Random(2, 30);
  CHECK(mse_per_component(truth, truth).isZero(0.0));
  CHECK(mse_per_component(Mat::Zero(1, 4), Mat::Constant(1, 4, 2.0))[0] == 4.0);
  CHECK_THROWS_AS(mse_per_component(truth, Mat::Zero(2, 3)), ConfigError);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(mean({1.0, 2.0, 6.0}) == 3.0);

  testing::TempDir dir;
  write_filter_csv(run_filter(setup, simulate(ex1, 5, 11)), dir / "f.csv");
  std::ifstream in(dir / "f.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,t,x_true_1,x_true_2,x_hat_1,x_hat_2,wall_ms");
}
