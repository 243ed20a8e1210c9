#pragma once

#include <functional>
#include <string>
#include <vector>

#include "yyf/linalg.hpp"

namespace yyf {

/// Continuous-time signal/observation model
///   dx = f(x,t) dt + G(x,t) dw,   E[dw dw^T] = Q(t) dt
///   dy = h(x,t) dt + dv,          E[dv dv^T] = S(t) dt
struct StateSpaceModel {
  using VectorField = std::function<Vec(const Vec&, double)>;
  using MatrixField = std::function<Mat(const Vec&, double)>;
  using TimeMatrix = std::function<Mat(double)>;
  using Feature = std::function<double(double)>;

  std::string name;
  int dim_x = 0;
  int dim_y = 0;
  int dim_w = 0;

  VectorField drift;
  MatrixField diffusion;
  TimeMatrix state_noise_cov;
  VectorField obs;
  TimeMatrix obs_noise_cov;
  MatrixField jac_f;
  MatrixField jac_h;

  /// Scalar functions of time that modulate the FKE coefficients. Empty for
  /// time-invariant models.
  std::vector<Feature> time_variant_features;

  /// G Q G^T does not depend on x, so its spatial derivatives vanish.
  bool diffusion_state_independent = false;
  /// f, G, Q, h and S do not depend on t.
  bool autonomous = false;
  /// h and S do not depend on t, so h^T S^{-1} may be cached per grid node.
  bool observation_time_invariant = false;

  /// G(x,t) Q(t) G(x,t)^T.
  Mat diffusion_matrix(const Vec& x, double t) const;
  /// h^T S^{-1} h at (x, t).
  double killing_rate(const Vec& x, double t) const;
  bool time_invariant() const { return time_variant_features.empty(); }
};

/// Forward Kolmogorov operator in non-divergence form,
///   (L - 1/2 h^T S^{-1} h) u = sum_ij A_ij u_ij + sum_j B_j u_j + C u.
struct FkeCoefficients {
  Mat second;   // A = D / 2 with D = G Q G^T
  Vec first;    // B_j = sum_i d_i D_ij - f_j
  double zeroth = 0.0;  // C = 1/2 sum_ij d_i d_j D_ij - div f - 1/2 h^T S^{-1} h
};

/// Expands the divergence-form operator with the product rule. Derivatives of
/// D fall back to central differences unless the model declares D
/// state-independent.
FkeCoefficients fke_coefficients(const StateSpaceModel& model, const Vec& x, double t);

/// Builtin examples: "example1" (cubic sensor), "example2" (time-variant
/// harmonic sensor), "example3" (time-variant cubic sensor).
StateSpaceModel make_example(const std::string& name);
std::vector<std::string> example_names();

/// dx = A x dt + G dw, dy = H x dt + dv with constant matrices and identity
/// noise covariances unless given.
StateSpaceModel make_linear_gaussian(const Mat& a, const Mat& g, const Mat& h,
                                     const Mat& q, const Mat& s);

/// Central-difference Jacobian of a vector field, used to check analytic ones.
Mat finite_difference_jacobian(const StateSpaceModel::VectorField& fn, const Vec& x, double t,
                               double step = 1e-6);

}  // namespace yyf
