#include <cmath>
#include <numbers>

#include "doctest.h"
#include "support.hpp"
#include "yyf/errors.hpp"
#include "yyf/rom.hpp"

using namespace yyf;

namespace {

RomDataset synthetic(int n, int k, int f, RandomStream& rng, const Mat& map) {
  RomDataset d;
  d.alpha.resize(k, n);
  d.features.resize(f, n);
  for (Eigen::Index i = 0; i < d.alpha.size(); ++i) d.alpha.data()[i] = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < d.features.size(); ++i) d.features.data()[i] = rng.uniform(-1, 1);
  d.beta = map * d.alpha;
  for (int j = 0; j < n; ++j) d.steps.push_back(j + 1);
  return d;
}

RomTrainConfig small_rom(int epochs) {
  RomTrainConfig c;
  c.epochs = epochs;
  c.n_train = 400;
  c.n_test = 100;
  c.batch_size = 50;
  c.width = 32;
  c.test_every = 50;
  return c;
}

}  // namespace

TEST_CASE("time features") {
  CHECK(time_features(make_example("example1"), 0.0, 0.01, 4).size() == 0);
  const StateSpaceModel ex2 = make_example("example2");
  CHECK(time_feature_dim(ex2, 4) == 10);
  const Vec tau = time_features(ex2, 0.0, 0.01, 4);
  REQUIRE(tau.size() == 10);
  CHECK(tau[0] == 1.0);
  CHECK(tau[5] == 1.0);
  CHECK(tau[2] == doctest::Approx(std::cos(20 * std::numbers::pi * 0.005)));
  CHECK(tau[9] == doctest::Approx(std::cos(18 * std::numbers::pi * 0.01)));

  StateSpaceModel flat = make_example("example1");
  flat.time_variant_features = {[](double) { return 0.25; }};
  const Vec c = time_features(flat, 3.0, 0.01, 4);
  CHECK(c.size() == 5);
  CHECK((c.array() == 0.25).all());
  CHECK_THROWS_AS(time_features(ex2, 0.0, 0.01, 0), ConfigError);
}

TEST_CASE("identity dynamics are learned at once") {
  RandomStream rng(1);
  const RomDataset d = synthetic(500, 6, 4, rng, Mat::Identity(6, 6));
  RandomStream train(2);
  const RomTrainResult r = train_rom(d, small_rom(20), train);
  CHECK(r.test_loss < 1e-6);
  CHECK(r.train_index.size() == 400);
  CHECK(r.test_index.size() == 100);
}

TEST_CASE("linear coefficient map") {
  RandomStream rng(3);
  Mat a(5, 5);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = 0.3 * rng.normal();
  a += Mat::Identity(5, 5);
  const RomDataset d = synthetic(500, 5, 0, rng, a);
  RandomStream train(4);
  std::vector<double> seen;
  const RomTrainResult r = train_rom(d, small_rom(1500), train, [&](int, double l) { seen.push_back(l); });
  CHECK(seen.size() == 1500);
  CHECK(r.test_loss < 1e-4);
  CHECK(r.test_history.back().first == 1500);
}

TEST_CASE("training configuration errors") {
  RandomStream rng(5);
  const RomDataset d = synthetic(100, 3, 0, rng, Mat::Identity(3, 3));
  RandomStream train(6);
  CHECK_THROWS_AS(train_rom(d, small_rom(5), train), ConfigError);
  RomTrainConfig bad = small_rom(5);
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("dataset from snapshot pairs") {
  const GridSpec g = GridSpec::uniform(2, -2.0, 2.0, 15);
  RandomStream rng(7);
  std::vector<DensityField> snaps;
  std::vector<SnapshotPair> pairs;
  for (int i = 1; i <= 6; ++i) {
    auto f = [&](double s) {
      return DensityField::from_function(g, [&](const Vec& x) { return std::exp(-0.5 * (x.squaredNorm() + s * x[0])); });
    };
    pairs.push_back({i, f(0.1 * i), f(0.1 * i + 0.05)});
    snaps.push_back(pairs.back().initial);
    snaps.push_back(pairs.back().terminal);
  }
  const PcaBasis b = fit_pca(snaps, {4, 0.99});
  const StateSpaceModel ex3 = make_example("example3");
  const RomDataset d = build_rom_dataset(pairs, b, ex3, 0.01, 4);
  CHECK(d.size() == 6);
  CHECK(d.alpha.col(2) == project(b, pairs[2].initial));
  CHECK(d.beta.col(2) == project(b, pairs[2].terminal));
  CHECK(d.features.col(2) == time_features(ex3, 0.02, 0.01, 4));
  CHECK(d.steps == std::vector<int>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("bundle round trip") {
  testing::TempDir dir;
  RandomStream rng(8);
  std::vector<DensityField> snaps;
  const GridSpec g = GridSpec::uniform(2, -2.0, 2.0, 15);
  for (int i = 0; i < 10; ++i) {
    const double c = rng.uniform(-1, 1);
    snaps.push_back(DensityField::from_function(g, [&](const Vec& x) { return std::exp(-(x[0] - c) * (x[0] - c) - x[1] * x[1]); }));
  }
  RomBundle bundle;
  bundle.basis = fit_pca(snaps, {5, 0.99});
  bundle.net = RomNet::glorot(5, 10, rng, 3, 16);
  bundle.manifest = {"example2", 5, 4, 0.01, "00000000deadbeef", 0.1, 0.2};
  write_rom_bundle(bundle, dir / "rom");
  const RomBundle back = read_rom_bundle(dir / "rom");
  CHECK(back.manifest.config_hash == "00000000deadbeef");
  CHECK(back.manifest.k == 5);
  CHECK(back.net.params() == bundle.net.params());
  const Vec alpha = Vec::LinSpaced(5, -1, 1), tau = Vec::LinSpaced(10, 0, 1);
  CHECK(rom_forward(back.net, alpha, tau) == rom_forward(bundle.net, alpha, tau));
  // Time-invariant models: predictions depend on alpha only.
  const RomNet plain = RomNet::glorot(5, 0, rng, 2, 8);
  CHECK(rom_forward(plain, alpha, Vec()) == rom_forward(plain, alpha, Vec()));
  CHECK(bundle_size_bytes(dir / "rom") > 0);
  CHECK_THROWS_AS(read_rom_bundle(dir / "missing"), FormatError);
}
