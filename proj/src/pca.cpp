#include "yyf/pca.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/SVD>

#include "yyf/binary_io.hpp"
#include "yyf/errors.hpp"

namespace yyf {

namespace {
constexpr char kMagic[9] = "YYFPCA01";
constexpr std::uint32_t kVersion = 1;
}  // namespace

DensityField PcaBasis::component(int j) const {
  if (j < 0 || j >= k()) throw ConfigError("pca: component index out of range");
  return {grid, components.col(j)};
}

void PcaBasis::finalize() {
  weighted_ = quadrature_weights(grid).asDiagonal() * components;
}

PcaBasis fit_pca(const std::vector<DensityField>& snapshots, const PcaOptions& options) {
  if (snapshots.size() < 2) throw ConfigError("pca: need at least two snapshots");
  const GridSpec& grid = snapshots.front().grid;
  const auto n = static_cast<Eigen::Index>(snapshots.size());
  if (options.k < 0 || options.k > n) {
    throw ConfigError("pca: K = " + std::to_string(options.k) + " exceeds the " +
                      std::to_string(n) + " snapshots");
  }
  if (options.k == 0 && !(options.variance_threshold > 0.0 && options.variance_threshold <= 1.0)) {
    throw ConfigError("pca: variance threshold must lie in (0, 1]");
  }

  const Vec sqrt_w = quadrature_weights(grid).cwiseSqrt();
  Mat x(grid.size(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const DensityField& s = snapshots[static_cast<std::size_t>(j)];
    if (!(s.grid == grid)) throw ConfigError("pca: snapshots on different grids");
    x.col(j) = sqrt_w.cwiseProduct(s.values);
  }

  Eigen::BDCSVD<Mat> svd(x, Eigen::ComputeThinU);
  const Vec energy = svd.singularValues().array().square();
  const double total = energy.sum();
  if (!(total > 0.0)) throw ConfigError("pca: all snapshots are zero");

  int k = options.k;
  if (k == 0) {
    double acc = 0.0;
    while (k < energy.size() && acc < options.variance_threshold * total) acc += energy[k++];
  }

  PcaBasis basis;
  basis.grid = grid;
  basis.components = sqrt_w.cwiseInverse().asDiagonal() * svd.matrixU().leftCols(k);
  basis.explained_variance_ratio = energy.head(k) / total;
  // Sign convention: the largest-magnitude node value of each component is positive.
  for (int j = 0; j < k; ++j) {
    Eigen::Index idx;
    basis.components.col(j).cwiseAbs().maxCoeff(&idx);
    if (basis.components(idx, j) < 0.0) basis.components.col(j) *= -1.0;
  }
  basis.finalize();
  return basis;
}

Vec project(const PcaBasis& basis, const DensityField& field) {
  if (!(field.grid == basis.grid)) throw ConfigError("pca: field grid does not match basis");
  return basis.weighted().transpose() * field.values;
}

Mat project(const PcaBasis& basis, const Mat& values) {
  if (values.rows() != basis.grid.size()) throw ConfigError("pca: node count does not match basis");
  return basis.weighted().transpose() * values;
}

DensityField reconstruct(const PcaBasis& basis, const Vec& coeffs) {
  if (coeffs.size() != basis.k()) throw ConfigError("pca: coefficient count does not match basis");
  return {basis.grid, basis.components * coeffs};
}

void write_pca_basis(const PcaBasis& basis, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  binary::write_magic(out, kMagic);
  binary::write_le<std::uint32_t>(out, kVersion);
  write_grid_spec(out, basis.grid);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(basis.k()));
  binary::write_doubles(out, basis.explained_variance_ratio);
  for (int j = 0; j < basis.k(); ++j) binary::write_doubles(out, basis.components.col(j));
  if (!out) throw ConfigError("write failed: " + path.string());
}

PcaBasis read_pca_basis(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  binary::expect_magic(in, kMagic, "PCA basis");
  if (binary::read_le<std::uint32_t>(in) != kVersion) throw FormatError("unsupported PCA basis version");
  PcaBasis basis;
  basis.grid = read_grid_spec(in);
  const auto k = binary::read_le<std::uint32_t>(in);
  basis.explained_variance_ratio = binary::read_doubles(in, k);
  if (basis.explained_variance_ratio.size() != static_cast<Eigen::Index>(k)) {
    throw FormatError("PCA basis: ratio count mismatch");
  }
  const auto nodes = static_cast<std::uint64_t>(basis.grid.size());
  basis.components.resize(basis.grid.size(), k);
  for (std::uint32_t j = 0; j < k; ++j) {
    const Vec c = binary::read_doubles(in, nodes);
    if (static_cast<std::uint64_t>(c.size()) != nodes) throw FormatError("PCA basis: component size mismatch");
    basis.components.col(j) = c;
  }
  basis.finalize();
  return basis;
}

}  // namespace yyf
