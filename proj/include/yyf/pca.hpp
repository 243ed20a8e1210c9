#pragma once

#include <filesystem>
#include <vector>

#include "yyf/grid.hpp"
#include "yyf/linalg.hpp"

namespace yyf {

/// Orthonormal field basis under the grid quadrature inner product.
struct PcaBasis {
  GridSpec grid;
  Mat components;                 // nodes x K, column j is phi_j
  Vec explained_variance_ratio;   // K, descending

  int k() const { return static_cast<int>(components.cols()); }
  DensityField component(int j) const;
  /// diag(w) * components, so that alpha = weighted^T u.
  const Mat& weighted() const { return weighted_; }
  /// Recomputes weighted(); call after filling grid and components by hand.
  void finalize();

 private:
  Mat weighted_;
};

struct PcaOptions {
  /// Number of components; 0 selects the smallest K reaching variance_threshold.
  int k = 30;
  double variance_threshold = 0.99;
};

/// Uncentered PCA of the snapshot set. Throws ConfigError on fewer than two
/// snapshots, mixed grids, or k above the snapshot count.
PcaBasis fit_pca(const std::vector<DensityField>& snapshots, const PcaOptions& options = {});

Vec project(const PcaBasis& basis, const DensityField& field);
/// Columns of `values` are node vectors on the basis grid.
Mat project(const PcaBasis& basis, const Mat& values);
DensityField reconstruct(const PcaBasis& basis, const Vec& coeffs);

/// Binary: "YYFPCA01", u32 version, grid spec, u32 K, ratios, then K fields.
void write_pca_basis(const PcaBasis& basis, const std::filesystem::path& path);
PcaBasis read_pca_basis(const std::filesystem::path& path);

}  // namespace yyf
