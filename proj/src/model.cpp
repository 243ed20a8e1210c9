#include "yyf/model.hpp"

#include <cmath>
#include <numbers>

#include "yyf/errors.hpp"

namespace yyf {

Mat StateSpaceModel::diffusion_matrix(const Vec& x, double t) const {
  const Mat g = diffusion(x, t);
  return g * state_noise_cov(t) * g.transpose();
}

double StateSpaceModel::killing_rate(const Vec& x, double t) const {
  const Vec hx = obs(x, t);
  const Mat s = obs_noise_cov(t);
  return hx.dot(s.llt().solve(hx));
}

FkeCoefficients fke_coefficients(const StateSpaceModel& model, const Vec& x, double t) {
  const int d = model.dim_x;
  const Mat dmat = model.diffusion_matrix(x, t);

  FkeCoefficients c;
  c.second = 0.5 * dmat;
  c.first = -model.drift(x, t);
  c.zeroth = -model.jac_f(x, t).trace() - 0.5 * model.killing_rate(x, t);

  if (!model.diffusion_state_independent) {
    // sum_i d_i D_ij and sum_ij d_i d_j D_ij by central differences.
    const double step = 1e-4;
    Vec e = x;
    for (int i = 0; i < d; ++i) {
      e = x;
      e[i] += step;
      const Mat dp = model.diffusion_matrix(e, t);
      e[i] -= 2 * step;
      const Mat dm = model.diffusion_matrix(e, t);
      c.first += (dp.row(i) - dm.row(i)).transpose() / (2 * step);
      for (int j = 0; j < d; ++j) {
        double second;
        if (i == j) {
          second = (dp(i, i) - 2 * dmat(i, i) + dm(i, i)) / (step * step);
        } else {
          auto at = [&](double si, double sj) {
            Vec p = x;
            p[i] += si * step;
            p[j] += sj * step;
            return model.diffusion_matrix(p, t)(i, j);
          };
          second = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * step * step);
        }
        c.zeroth += 0.5 * second;
      }
    }
  }
  return c;
}

namespace {

Mat identity_cov(int n) { return Mat::Identity(n, n); }

StateSpaceModel cubic_base() {
  StateSpaceModel m;
  m.dim_x = 2;
  m.dim_y = 2;
  m.dim_w = 2;
  m.drift = [](const Vec& x, double) {
    Vec f(2);
    f << -0.4 * x[0] + 0.1 * x[1], -0.6 * x[1];
    return f;
  };
  m.jac_f = [](const Vec&, double) {
    Mat j(2, 2);
    j << -0.4, 0.1, 0.0, -0.6;
    return j;
  };
  m.state_noise_cov = [](double) { return identity_cov(2); };
  m.obs_noise_cov = [](double) { return identity_cov(2); };
  m.diffusion_state_independent = true;
  m.observation_time_invariant = true;
  return m;
}

void set_cubic_sensor(StateSpaceModel& m) {
  m.obs = [](const Vec& x, double) {
    Vec h(2);
    h << x[0] * x[0] * x[0], x[1] * x[1] * x[1];
    return h;
  };
  m.jac_h = [](const Vec& x, double) {
    Mat j = Mat::Zero(2, 2);
    j(0, 0) = 3 * x[0] * x[0];
    j(1, 1) = 3 * x[1] * x[1];
    return j;
  };
}

double modulator1(double t) { return 1.0 + 0.1 * std::cos(20 * std::numbers::pi * t); }
double modulator2(double t) { return 0.9 + 0.2 * std::cos(18 * std::numbers::pi * t); }

void set_modulated_diffusion(StateSpaceModel& m) {
  m.diffusion = [](const Vec&, double t) {
    Mat g = Mat::Zero(2, 2);
    g(0, 0) = modulator1(t);
    g(1, 1) = modulator2(t);
    return g;
  };
  // The ROM sees the oscillating parts of the diffusion amplitudes.
  m.time_variant_features = {[](double t) { return std::cos(20 * std::numbers::pi * t); },
                             [](double t) { return std::cos(18 * std::numbers::pi * t); }};
}

}  // namespace

StateSpaceModel make_example(const std::string& name) {
  if (name == "example1") {
    StateSpaceModel m = cubic_base();
    m.name = name;
    m.diffusion = [](const Vec&, double) { return identity_cov(2); };
    m.autonomous = true;
    set_cubic_sensor(m);
    return m;
  }
  if (name == "example2") {
    StateSpaceModel m = cubic_base();
    m.name = name;
    set_modulated_diffusion(m);
    m.obs = [](const Vec& x, double) {
      Vec h(2);
      h << x[0] * (1 + 0.2 * std::cos(x[1])), x[1] * (1 + 0.2 * std::cos(x[0]));
      return h;
    };
    m.jac_h = [](const Vec& x, double) {
      Mat j(2, 2);
      j << 1 + 0.2 * std::cos(x[1]), -0.2 * x[0] * std::sin(x[1]),
          -0.2 * x[1] * std::sin(x[0]), 1 + 0.2 * std::cos(x[0]);
      return j;
    };
    return m;
  }
  if (name == "example3") {
    StateSpaceModel m = cubic_base();
    m.name = name;
    set_modulated_diffusion(m);
    set_cubic_sensor(m);
    return m;
  }
  throw ConfigError("unknown model '" + name + "'");
}

std::vector<std::string> example_names() { return {"example1", "example2", "example3"}; }

StateSpaceModel make_linear_gaussian(const Mat& a, const Mat& g, const Mat& h, const Mat& q,
                                     const Mat& s) {
  if (a.rows() != a.cols() || g.rows() != a.rows() || h.cols() != a.rows() ||
      q.rows() != g.cols() || s.rows() != h.rows()) {
    throw ConfigError("linear model: inconsistent matrix shapes");
  }
  StateSpaceModel m;
  m.name = "linear";
  m.dim_x = static_cast<int>(a.rows());
  m.dim_y = static_cast<int>(h.rows());
  m.dim_w = static_cast<int>(g.cols());
  m.drift = [a](const Vec& x, double) -> Vec { return a * x; };
  m.jac_f = [a](const Vec&, double) -> Mat { return a; };
  m.diffusion = [g](const Vec&, double) -> Mat { return g; };
  m.state_noise_cov = [q](double) -> Mat { return q; };
  m.obs = [h](const Vec& x, double) -> Vec { return h * x; };
  m.jac_h = [h](const Vec&, double) -> Mat { return h; };
  m.obs_noise_cov = [s](double) -> Mat { return s; };
  m.diffusion_state_independent = true;
  m.autonomous = true;
  m.observation_time_invariant = true;
  return m;
}

Mat finite_difference_jacobian(const StateSpaceModel::VectorField& fn, const Vec& x, double t,
                               double step) {
  const Vec f0 = fn(x, t);
  Mat j(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vec xp = x, xm = x;
    xp[k] += step;
    xm[k] -= step;
    j.col(k) = (fn(xp, t) - fn(xm, t)) / (2 * step);
  }
  return j;
}

}  // namespace yyf
