#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "yyf/dense_net.hpp"
#include "yyf/linalg.hpp"
#include "yyf/model.hpp"

namespace yyf {

/// Uniform tensor grid over a box, endpoints included. Node values are stored
/// row-major: the last dimension varies fastest.
struct GridSpec {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<int> n;

  static GridSpec uniform(int dims, double lo, double hi, int nodes_per_dim);

  /// Throws ConfigError unless hi > lo and n >= 3 in every dimension.
  void validate() const;
  int dims() const { return static_cast<int>(n.size()); }
  Eigen::Index size() const;
  double spacing(int k) const { return (hi[k] - lo[k]) / (n[k] - 1); }
  double coordinate(int k, int i) const { return lo[k] + i * spacing(k); }
  double volume() const;

  std::vector<int> multi_index(Eigen::Index flat) const;
  Eigen::Index flat_index(const std::vector<int>& idx) const;
  Vec node(Eigen::Index flat) const;
  /// All node coordinates, dims x size.
  Mat nodes() const;
  bool on_boundary(Eigen::Index flat) const;

  /// Same grid with (n - 1) * factor + 1 nodes per dimension; the original
  /// nodes remain nodes of the refined grid.
  GridSpec refined(int factor) const;

  bool operator==(const GridSpec&) const = default;
};

/// Tensor-product trapezoid weights.
Vec quadrature_weights(const GridSpec& grid);

struct DensityField {
  GridSpec grid;
  Vec values;

  static DensityField zeros(const GridSpec& grid);
  static DensityField from_function(const GridSpec& grid, const std::function<double(const Vec&)>& fn);
};

double integrate(const DensityField& field);
/// Quadrature inner product of two fields on the same grid.
double inner(const DensityField& a, const DensityField& b);
/// sqrt(int (a - b)^2 / int b^2).
double relative_l2(const DensityField& a, const DensityField& reference);

/// int x u / int u. Throws FilterDivergence when the mass is not positive.
Vec posterior_mean(const DensityField& field);
/// Rows: quadrature weights, then weights times each coordinate.
Mat moment_weights(const GridSpec& grid);
/// Same as above with precomputed moment_weights(grid).
Vec posterior_mean(const Mat& moments, const Vec& values);

/// Multilinear interpolation; points outside the box are clamped onto it.
double interpolate(const DensityField& field, const Vec& x);
/// Resamples onto another grid by interpolation.
DensityField resample(const DensityField& field, const GridSpec& target);

struct UpdateStats {
  std::int64_t clamped_exponents = 0;
};

/// Multiplies by exp(h(x,t)^T S(t)^{-1} dy) and renormalizes to unit mass.
/// Exponent arguments are clamped to +-700 (counted in `stats`).
DensityField apply_observation_update(const DensityField& field, const StateSpaceModel& model,
                                      const Vec& dy, double t, UpdateStats* stats = nullptr);

/// Per-node S^{-1} h(x) rows (m x nodes) for repeated updates on one grid.
Mat observation_weights(const GridSpec& grid, const StateSpaceModel& model, double t);
DensityField apply_observation_update(const DensityField& field, const Mat& weights,
                                      const Vec& dy, UpdateStats* stats = nullptr);

/// field.values[node] = forward(net, (x_node, t)).
DensityField evaluate_net_on_grid(const DenseNet& net, const GridSpec& grid, double t);

struct FdOptions {
  /// Substep = safety * h_min^2 / max diffusion.
  double safety = 0.2;
  std::int64_t max_substeps = 10'000'000;
  bool parallel = true;
};

/// Explicit finite-difference solve of the FKE over [t_start, t_start + dt]
/// with zero Dirichlet boundaries. The operator is discretized in
/// divergence form with central differences.
DensityField fd_fke_step(const DensityField& field, const StateSpaceModel& model, double t_start,
                         double dt, const FdOptions& options = {});
/// Number of substeps fd_fke_step would take.
std::int64_t fd_substeps(const GridSpec& grid, const StateSpaceModel& model, double t_start,
                         double dt, const FdOptions& options = {});

/// Binary: "YYFGRID1", u32 version, u32 dims, per dim (f64 lo, f64 hi,
/// u32 n), then u64 count and little-endian doubles.
void write_field(const DensityField& field, const std::filesystem::path& path);
DensityField read_field(const std::filesystem::path& path);
void write_grid_spec(std::ostream& out, const GridSpec& grid);
GridSpec read_grid_spec(std::istream& in);
/// CSV: x_1..x_d,u per node.
void write_field_csv(const DensityField& field, const std::filesystem::path& path);

}  // namespace yyf
