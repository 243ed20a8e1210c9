#include <cmath>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "yyf/dense_net.hpp"
#include "yyf/errors.hpp"
#include "yyf/pinn.hpp"

using namespace yyf;

namespace {

// Straight-line evaluator written against the documented parameter layout.
double reference_forward(const DenseNet& net, const Vec& x) {
  const Vec& p = net.params();
  std::vector<double> h(x.data(), x.data() + x.size());
  std::size_t off = 0;
  for (int l = 0; l < net.num_layers(); ++l) {
    const int in = net.layer_in(l), out = net.layer_out(l);
    std::vector<double> next(out);
    for (int o = 0; o < out; ++o) {
      double s = p[static_cast<Eigen::Index>(off + static_cast<std::size_t>(out) * in + o)];
      for (int i = 0; i < in; ++i) s += p[static_cast<Eigen::Index>(off + static_cast<std::size_t>(i) * out + o)] * h[i];
      const bool hidden = l < net.hidden_layers();
      next[o] = hidden && net.activation() == Activation::Tanh ? std::tanh(s) : s;
    }
    off += static_cast<std::size_t>(out) * (in + 1);
    h = std::move(next);
  }
  return h[0];
}

Mat random_inputs(RandomStream& rng, int dims, int n, double scale = 2.0) {
  Mat z(dims, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (int i = 0; i < dims; ++i) z(i, j) = rng.uniform(-scale, scale);
  return z;
}

DenseNet random_net(RandomStream& rng, int in, int layers, int width) {
  DenseNet net = DenseNet::glorot(in, layers, width, rng);
  for (Eigen::Index i = 0; i < net.params().size(); ++i) net.params()[i] += 0.1 * rng.normal();
  return net;
}

// Mixed loss over every jet channel so each derivative path is exercised.
double mixed_loss(const Mat& out, Mat& g, const Vec& coeffs) {
  double s = 0.0;
  for (Eigen::Index q = 0; q < out.cols(); ++q)
    for (Eigen::Index c = 0; c < out.rows(); ++c) {
      const double w = coeffs[c];
      s += 0.5 * w * out(c, q) * out(c, q) + 0.1 * out(c, q);
      g(c, q) = w * out(c, q) + 0.1;
    }
  return s;
}

}  // namespace

TEST_CASE("parameter layout and counts") {
  for (auto [in, layers, width] : {std::tuple{3, 4, 40}, std::tuple{2, 1, 5}, std::tuple{4, 0, 1}}) {
    const DenseNet net(in, layers, width);
    CHECK(static_cast<std::size_t>(net.params().size()) == DenseNet::param_count(in, layers, width));
  }
  CHECK(DenseNet::param_count(3, 4, 40) == 4 * 40 + 3 * 40 * 41 + 41);
  CHECK_THROWS_AS(DenseNet(0, 1, 4), ConfigError);
}

TEST_CASE("zero network") {
  const DenseNet net(3, 4, 40);
  const Vec x = (Vec(3) << 0.4, -1.0, 0.005).finished();
  CHECK(forward(net, x) == 0.0);
  const InputDerivatives d = input_derivatives(net, x);
  CHECK(d.value == 0.0);
  CHECK(d.du_dt == 0.0);
  CHECK(d.du_dx.isZero(0.0));
  CHECK(d.d2u_dx2.isZero(0.0));
}

TEST_CASE("identity activation with unit weights adds the bias") {
  DenseNet net(3, 1, 3, Activation::Identity);
  net.weight(0) = Mat::Identity(3, 3);
  net.bias(0) << 0.5, -1.0, 2.0;
  RandomStream rng(4);
  const Mat z = random_inputs(rng, 3, 20);
  for (int k = 0; k < 3; ++k) {
    net.weight(1).setZero();
    net.weight(1)(0, k) = 1.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      CHECK(forward(net, z.col(j)) == doctest::Approx(z(k, j) + net.bias(0)[k]).epsilon(1e-14));
    }
  }
}

TEST_CASE("random network output matches the reference evaluator") {
  RandomStream rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const DenseNet net = random_net(rng, 3, 4, 40);
    const Mat z = random_inputs(rng, 3, 100);
    const Mat batched = forward_jet(net, z, JetSpec::value_only());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double ref = reference_forward(net, z.col(j));
      CHECK(std::abs(batched(0, j) - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
      CHECK(std::abs(forward(net, z.col(j)) - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST_CASE("batched jets agree with the serial reference") {
  RandomStream rng(6);
  for (const JetSpec spec : {JetSpec::value_only(), JetSpec::with_hessian(2), JetSpec::with_hessian(3)}) {
    const DenseNet net = random_net(rng, 3, 3, 24);
    // 77 points: not a multiple of the chunk size.
    const Mat z = random_inputs(rng, 3, 77);
    const Mat batched = forward_jet(net, z, spec);
    const Mat reference = serial::forward_jet(net, z, spec);
    CHECK(testing::max_abs(batched - reference) <= 1e-12 * std::max(1.0, testing::max_abs(reference)));

    Vec coeffs(spec.channels(3));
    for (Eigen::Index c = 0; c < coeffs.size(); ++c) coeffs[c] = 0.5 + 0.25 * c;
    const JetLoss loss = [&](Eigen::Index, const Mat& out, Mat& g) { return mixed_loss(out, g, coeffs); };
    const LossAndGrad a = grad_params(net, z, spec, loss);
    const LossAndGrad b = serial::grad_params(net, z, spec, loss);
    CHECK(testing::rel_err(a.loss, b.loss) <= 1e-12);
    CHECK((a.grad - b.grad).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, b.grad.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("kernel results do not depend on reuse") {
  RandomStream rng(7);
  const DenseNet net = random_net(rng, 3, 2, 16);
  const Mat z = random_inputs(rng, 3, 100);
  const JetLoss loss = [](Eigen::Index, const Mat& out, Mat& g) {
    g.row(0) = out.row(0);
    return 0.5 * out.row(0).squaredNorm();
  };
  JetKernel kernel;
  const LossAndGrad first = kernel.loss_and_grad(net, z, JetSpec::with_hessian(2), loss);
  kernel.forward(net, z.leftCols(5), JetSpec::value_only());
  const LossAndGrad second = kernel.loss_and_grad(net, z, JetSpec::with_hessian(2), loss);
  CHECK(first.loss == second.loss);
  CHECK(first.grad == second.grad);
}

TEST_CASE("gradient of simple losses") {
  RandomStream rng(8);
  SUBCASE("constant loss") {
    const DenseNet net = random_net(rng, 3, 2, 8);
    const LossAndGrad r = grad_params(net, random_inputs(rng, 3, 10), JetSpec::value_only(),
                                      [](Eigen::Index, const Mat&, Mat&) { return 3.0; });
    CHECK(r.grad.isZero(0.0));
  }
  SUBCASE("quadratic loss on a single linear layer") {
    DenseNet net(3, 0, 1);
    for (Eigen::Index i = 0; i < net.params().size(); ++i) net.params()[i] = rng.normal();
    const Mat z = random_inputs(rng, 3, 40);
    const Vec target = Vec::LinSpaced(40, -1.0, 1.0);
    const LossAndGrad r = grad_params(net, z, JetSpec::value_only(), [&](Eigen::Index first, const Mat& out, Mat& g) {
      const Eigen::RowVectorXd e = out.row(0) - target.segment(first, out.cols()).transpose();
      g.row(0) = e;
      return 0.5 * e.squaredNorm();
    });
    // u = w.z + b, L = 1/2 sum (u - y)^2: dL/dw = sum e z, dL/db = sum e.
    const Vec w = net.weight(0).row(0).transpose();
    const Vec e = (z.transpose() * w).array() + net.bias(0)[0] - target.array();
    CHECK((r.grad.head(3) - z * e).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::abs(r.grad[3] - e.sum()) <= 1e-12);
  }
}

TEST_CASE("PINN loss gradient matches central differences") {
  const StateSpaceModel model = make_example("example1");
  const GridSpec grid = GridSpec::uniform(2, -2.2, 2.2, 30);
  FkeProblem problem;
  problem.model = &model;
  problem.initial_condition = standard_initial_density(grid);
  problem.dt = 0.01;
  PinnTrainConfig cfg;
  cfg.n_fke = 200;
  cfg.n_ic = 100;
  cfg.n_bc = 40;
  RandomStream rng(9);
  const CollocationSet pts = sample_collocation(problem, cfg, rng);
  for (int trial = 0; trial < 3; ++trial) {
    DenseNet net = random_net(rng, 3, 4, 40);
    const Vec g = pinn_loss_and_grad(net, problem, cfg, pts).grad;
    const double scale = g.cwiseAbs().maxCoeff();
    int bad = 0;
    for (int k = 0; k < 50; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(g.size()));
      const double h = 1e-5, saved = net.params()[i];
      net.params()[i] = saved + h;
      const double lp = pinn_loss_and_grad(net, problem, cfg, pts).parts.total;
      net.params()[i] = saved - h;
      const double lm = pinn_loss_and_grad(net, problem, cfg, pts).parts.total;
      net.params()[i] = saved;
      const double fd = (lp - lm) / (2 * h);
      bad += testing::rel_err(g[i], fd, 1e-4 * scale) > 1e-5;
    }
    CHECK(bad == 0);
  }
}

TEST_CASE("input derivatives") {
  SUBCASE("single tanh unit in closed form") {
    DenseNet net(3, 1, 1);
    net.weight(0) << 0.7, -0.4, 1.5;
    net.bias(0) << 0.2;
    net.weight(1) << 2.0;
    const Vec x = (Vec(3) << 0.3, 0.8, 0.004).finished();
    const double a = 0.7 * 0.3 - 0.4 * 0.8 + 1.5 * 0.004 + 0.2;
    const double t = std::tanh(a), s1 = 1 - t * t, s2 = -2 * t * s1;
    const Vec w = (Vec(3) << 0.7, -0.4, 1.5).finished();
    const InputDerivatives d = input_derivatives(net, x);
    CHECK(d.value == doctest::Approx(2 * t).epsilon(1e-14));
    CHECK(d.du_dt == doctest::Approx(2 * s1 * 1.5).epsilon(1e-14));
    for (int i = 0; i < 2; ++i) {
      CHECK(d.du_dx[i] == doctest::Approx(2 * s1 * w[i]).epsilon(1e-14));
      for (int j = 0; j < 2; ++j) CHECK(d.d2u_dx2(i, j) == doctest::Approx(2 * s2 * w[i] * w[j]).epsilon(1e-13));
    }
  }
  SUBCASE("rigged net for u = x1^2") {
    // [tanh(b + e x) + tanh(b - e x) - 2 tanh(b)] / (e^2 tanh''(b)) = x^2 + O(e^2 x^4).
    const double b = 0.5, e = 1e-3;
    const double tb = std::tanh(b), t2 = -2 * tb * (1 - tb * tb);
    DenseNet net(3, 1, 3);
    net.weight(0) << e, 0, 0, -e, 0, 0, 0, 0, 0;
    net.bias(0) << b, b, b;
    net.weight(1) << 1 / (e * e * t2), 1 / (e * e * t2), -2 / (e * e * t2);
    const Vec x = (Vec(3) << 0.6, -1.1, 0.003).finished();
    const InputDerivatives d = input_derivatives(net, x);
    CHECK(d.d2u_dx2(0, 0) == doctest::Approx(2.0).epsilon(1e-5));
    CHECK(d.d2u_dx2(0, 1) == 0.0);
    CHECK(d.d2u_dx2(1, 1) == 0.0);
    CHECK(d.du_dx[1] == 0.0);
    CHECK(d.du_dt == 0.0);
    CHECK(d.du_dx[0] == doctest::Approx(1.2).epsilon(1e-5));
  }
  SUBCASE("random nets against finite differences") {
    RandomStream rng(10);
    for (int trial = 0; trial < 10; ++trial) {
      const DenseNet net = random_net(rng, 3, 4, 40);
      for (int p = 0; p < 5; ++p) {
        const Vec x = random_inputs(rng, 3, 1, 1.5).col(0);
        const InputDerivatives d = input_derivatives(net, x);
        const double h = 1e-4;
        auto f = [&](const Vec& z) { return forward(net, z); };
        const double u0 = f(x);
        const double floor = 1e-2 * std::max(1.0, std::abs(u0));
        for (int i = 0; i < 3; ++i) {
          Vec a = x, b = x;
          a[i] += h;
          b[i] -= h;
          const double fd1 = (f(a) - f(b)) / (2 * h);
          const double an1 = i < 2 ? d.du_dx[i] : d.du_dt;
          CHECK(testing::rel_err(an1, fd1, floor) <= 1e-4);
        }
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            Vec pp = x, pm = x, mp = x, mm = x;
            pp[i] += h; pp[j] += h;
            pm[i] += h; pm[j] -= h;
            mp[i] -= h; mp[j] += h;
            mm[i] -= h; mm[j] -= h;
            const double fd2 = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h);
            CHECK(testing::rel_err(d.d2u_dx2(i, j), fd2, floor) <= 1e-4);
          }
        CHECK(std::abs(d.d2u_dx2(0, 1) - d.d2u_dx2(1, 0)) <= 1e-10);
      }
    }
  }
}

TEST_CASE("copied parameters give identical outputs") {
  RandomStream rng(11);
  const DenseNet a = random_net(rng, 3, 4, 40);
  DenseNet b(3, 4, 40);
  REQUIRE(a.same_shape(b));
  b.params() = a.params();
  const Mat z = random_inputs(rng, 3, 64);
  CHECK(forward_jet(a, z, JetSpec::with_hessian(2)) == forward_jet(b, z, JetSpec::with_hessian(2)));
}

TEST_CASE("input dimension mismatch") {
  const DenseNet net(3, 1, 4);
  CHECK_THROWS_AS(forward(net, Vec::Zero(2)), ConfigError);
  CHECK_THROWS_AS(forward_jet(net, Mat::Zero(3, 2), JetSpec{1, 0}), ConfigError);
}
