#include "yyf/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "yyf/binary_io.hpp"
#include "yyf/errors.hpp"

namespace yyf {

// ---------------------------------------------------------------------------
// GridSpec

GridSpec GridSpec::uniform(int dims, double lo, double hi, int nodes_per_dim) {
  GridSpec g;
  g.lo.assign(dims, lo);
  g.hi.assign(dims, hi);
  g.n.assign(dims, nodes_per_dim);
  g.validate();
  return g;
}

void GridSpec::validate() const {
  if (n.empty() || lo.size() != n.size() || hi.size() != n.size()) {
    throw ConfigError("grid: bounds and resolution must have matching nonzero dimension");
  }
  for (std::size_t k = 0; k < n.size(); ++k) {
    if (!(hi[k] > lo[k])) throw ConfigError("grid: upper bound must exceed lower bound");
    if (n[k] < 3) throw ConfigError("grid: need at least 3 nodes per dimension");
  }
}

Eigen::Index GridSpec::size() const {
  Eigen::Index s = 1;
  for (int v : n) s *= v;
  return s;
}

double GridSpec::volume() const {
  double v = 1.0;
  for (std::size_t k = 0; k < n.size(); ++k) v *= hi[k] - lo[k];
  return v;
}

std::vector<int> GridSpec::multi_index(Eigen::Index flat) const {
  std::vector<int> idx(n.size());
  for (int k = dims() - 1; k >= 0; --k) {
    idx[k] = static_cast<int>(flat % n[k]);
    flat /= n[k];
  }
  return idx;
}

Eigen::Index GridSpec::flat_index(const std::vector<int>& idx) const {
  Eigen::Index flat = 0;
  for (int k = 0; k < dims(); ++k) flat = flat * n[k] + idx[k];
  return flat;
}

Vec GridSpec::node(Eigen::Index flat) const {
  const auto idx = multi_index(flat);
  Vec x(dims());
  for (int k = 0; k < dims(); ++k) x[k] = coordinate(k, idx[k]);
  return x;
}

Mat GridSpec::nodes() const {
  Mat out(dims(), size());
  for (Eigen::Index p = 0; p < size(); ++p) out.col(p) = node(p);
  return out;
}

bool GridSpec::on_boundary(Eigen::Index flat) const {
  const auto idx = multi_index(flat);
  for (int k = 0; k < dims(); ++k)
    if (idx[k] == 0 || idx[k] == n[k] - 1) return true;
  return false;
}

GridSpec GridSpec::refined(int factor) const {
  GridSpec g = *this;
  for (auto& v : g.n) v = (v - 1) * factor + 1;
  return g;
}

Vec quadrature_weights(const GridSpec& grid) {
  Vec w(grid.size());
  for (Eigen::Index p = 0; p < w.size(); ++p) {
    const auto idx = grid.multi_index(p);
    double v = 1.0;
    for (int k = 0; k < grid.dims(); ++k) {
      const bool end = idx[k] == 0 || idx[k] == grid.n[k] - 1;
      v *= grid.spacing(k) * (end ? 0.5 : 1.0);
    }
    w[p] = v;
  }
  return w;
}

// ---------------------------------------------------------------------------
// DensityField basics

DensityField DensityField::zeros(const GridSpec& grid) {
  grid.validate();
  return {grid, Vec::Zero(grid.size())};
}

DensityField DensityField::from_function(const GridSpec& grid,
                                         const std::function<double(const Vec&)>& fn) {
  DensityField f = zeros(grid);
  for (Eigen::Index p = 0; p < f.values.size(); ++p) f.values[p] = fn(grid.node(p));
  return f;
}

namespace {

void require_same_grid(const DensityField& a, const DensityField& b) {
  if (!(a.grid == b.grid)) throw ConfigError("fields live on different grids");
}

}  // namespace

double integrate(const DensityField& field) {
  return quadrature_weights(field.grid).dot(field.values);
}

double inner(const DensityField& a, const DensityField& b) {
  require_same_grid(a, b);
  return (quadrature_weights(a.grid).array() * a.values.array() * b.values.array()).sum();
}

double relative_l2(const DensityField& a, const DensityField& reference) {
  require_same_grid(a, reference);
  const Vec w = quadrature_weights(a.grid);
  const double num = (w.array() * (a.values - reference.values).array().square()).sum();
  const double den = (w.array() * reference.values.array().square()).sum();
  return std::sqrt(num / den);
}

Mat moment_weights(const GridSpec& grid) {
  const Vec w = quadrature_weights(grid);
  Mat m(grid.dims() + 1, grid.size());
  m.row(0) = w.transpose();
  m.bottomRows(grid.dims()) = grid.nodes() * w.asDiagonal();
  return m;
}

Vec posterior_mean(const Mat& moments, const Vec& values) {
  if (moments.cols() != values.size()) throw ConfigError("posterior mean: node count mismatch");
  const Vec r = moments * values;
  const double mass = r[0];
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw FilterDivergence("density has nonpositive or non-finite mass");
  }
  return r.tail(r.size() - 1) / mass;
}

Vec posterior_mean(const DensityField& field) {
  return posterior_mean(moment_weights(field.grid), field.values);
}

double interpolate(const DensityField& field, const Vec& x) {
  const GridSpec& g = field.grid;
  const int d = g.dims();
  std::vector<int> base(d);
  std::vector<double> frac(d);
  for (int k = 0; k < d; ++k) {
    const double s = std::clamp((x[k] - g.lo[k]) / g.spacing(k), 0.0, double(g.n[k] - 1));
    int i = static_cast<int>(std::floor(s));
    if (i >= g.n[k] - 1) i = g.n[k] - 2;
    base[k] = i;
    frac[k] = s - i;
  }
  double value = 0.0;
  std::vector<int> idx(d);
  for (int corner = 0; corner < (1 << d); ++corner) {
    double weight = 1.0;
    for (int k = 0; k < d; ++k) {
      const int bit = (corner >> k) & 1;
      idx[k] = base[k] + bit;
      weight *= bit ? frac[k] : 1.0 - frac[k];
    }
    if (weight != 0.0) value += weight * field.values[g.flat_index(idx)];
  }
  return value;
}

DensityField resample(const DensityField& field, const GridSpec& target) {
  DensityField out = DensityField::zeros(target);
  for (Eigen::Index p = 0; p < out.values.size(); ++p)
    out.values[p] = interpolate(field, target.node(p));
  return out;
}

// ---------------------------------------------------------------------------
// Observation update

Mat observation_weights(const GridSpec& grid, const StateSpaceModel& model, double t) {
  const Eigen::LLT<Mat> s(model.obs_noise_cov(t));
  Mat w(model.dim_y, grid.size());
  for (Eigen::Index p = 0; p < grid.size(); ++p) w.col(p) = s.solve(model.obs(grid.node(p), t));
  return w;
}

DensityField apply_observation_update(const DensityField& field, const Mat& weights,
                                      const Vec& dy, UpdateStats* stats) {
  if (!dy.allFinite()) throw ConfigError("observation increment is not finite");
  if (weights.cols() != field.values.size() || weights.rows() != dy.size()) {
    throw ConfigError("observation update: dimension mismatch");
  }
  constexpr double kLimit = 700.0;
  Vec expo = weights.transpose() * dy;
  std::int64_t clamped = 0;
  for (Eigen::Index p = 0; p < expo.size(); ++p) {
    if (expo[p] > kLimit || expo[p] < -kLimit) {
      expo[p] = std::clamp(expo[p], -kLimit, kLimit);
      ++clamped;
    }
  }
  if (stats) stats->clamped_exponents += clamped;
  // A common shift cancels in the renormalization and keeps exp() in range.
  double shift = -kLimit;
  for (Eigen::Index p = 0; p < expo.size(); ++p)
    if (field.values[p] != 0.0) shift = std::max(shift, expo[p]);
  if (shift < 0.0) shift = 0.0;

  DensityField out = field;
  out.values.array() *= (expo.array() - shift).exp();
  const double mass = integrate(out);
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw FilterDivergence("observation update left no probability mass");
  }
  out.values /= mass;
  return out;
}

DensityField apply_observation_update(const DensityField& field, const StateSpaceModel& model,
                                      const Vec& dy, double t, UpdateStats* stats) {
  return apply_observation_update(field, observation_weights(field.grid, model, t), dy, stats);
}

DensityField evaluate_net_on_grid(const DenseNet& net, const GridSpec& grid, double t) {
  if (net.input_dim() != grid.dims() + 1) throw ConfigError("network input does not match grid + time");
  Mat inputs(grid.dims() + 1, grid.size());
  inputs.topRows(grid.dims()) = grid.nodes();
  inputs.row(grid.dims()).setConstant(t);
  DensityField out{grid, forward_jet(net, inputs, JetSpec::value_only()).row(0).transpose()};
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

namespace {

struct NodeCoefficients {
  // Per node: D (d*d row-major), f (d), rate (killing term 1/2 h^T S^-1 h).
  Mat diffusion;
  Mat drift;
  Vec killing;
  double max_diffusion = 0.0;
  double max_rate = 0.0;
};

NodeCoefficients node_coefficients(const GridSpec& g, const StateSpaceModel& model, double t) {
  const int d = g.dims();
  NodeCoefficients c;
  c.diffusion.resize(d * d, g.size());
  c.drift.resize(d, g.size());
  c.killing.resize(g.size());
  for (Eigen::Index p = 0; p < g.size(); ++p) {
    const Vec x = g.node(p);
    const Mat dm = model.diffusion_matrix(x, t);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) c.diffusion(i * d + j, p) = dm(i, j);
    c.drift.col(p) = model.drift(x, t);
    c.killing[p] = 0.5 * model.killing_rate(x, t);
    for (int i = 0; i < d; ++i) c.max_diffusion = std::max(c.max_diffusion, dm(i, i));
    c.max_rate = std::max(c.max_rate, c.killing[p] + std::abs(model.jac_f(x, t).trace()));
  }
  return c;
}

double min_spacing(const GridSpec& g) {
  double h = g.spacing(0);
  for (int k = 1; k < g.dims(); ++k) h = std::min(h, g.spacing(k));
  return h;
}

std::int64_t substep_count(const GridSpec& g, double max_diffusion, double max_rate, double dt,
                           const FdOptions& options) {
  const double h = min_spacing(g);
  double sub = dt;
  if (max_diffusion > 0.0) sub = std::min(sub, options.safety * h * h / max_diffusion);
  if (max_rate > 0.0) sub = std::min(sub, 0.5 / max_rate);
  const double count = std::ceil(dt / sub - 1e-9);
  if (!(count <= static_cast<double>(options.max_substeps))) {
    throw ConfigError("finite-difference stability bound needs too many substeps at this resolution");
  }
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(count));
}

void fd_rhs(const GridSpec& g, const NodeCoefficients& c, const Vec& u, Vec& out, bool parallel) {
  const int d = g.dims();
  std::vector<Eigen::Index> stride(d);
  {
    Eigen::Index s = 1;
    for (int k = d - 1; k >= 0; --k) {
      stride[k] = s;
      s *= g.n[k];
    }
  }
  const Eigen::Index size = g.size();
  // Products D_ij u and f_i u at every node.
  Mat du(d * d, size), fu(d, size);
  for (Eigen::Index p = 0; p < size; ++p) {
    du.col(p) = c.diffusion.col(p) * u[p];
    fu.col(p) = c.drift.col(p) * u[p];
  }
  out.setZero(size);
#pragma omp parallel for schedule(static) if (parallel)
  for (Eigen::Index p = 0; p < size; ++p) {
    if (g.on_boundary(p)) continue;
    double acc = -c.killing[p] * u[p];
    for (int i = 0; i < d; ++i) {
      const double hi = g.spacing(i);
      const int ii = i * d + i;
      acc += 0.5 * (du(ii, p + stride[i]) - 2.0 * du(ii, p) + du(ii, p - stride[i])) / (hi * hi);
      acc -= (fu(i, p + stride[i]) - fu(i, p - stride[i])) / (2.0 * hi);
      for (int j = i + 1; j < d; ++j) {
        const double hj = g.spacing(j);
        const int ij = i * d + j;
        const double cross = du(ij, p + stride[i] + stride[j]) - du(ij, p + stride[i] - stride[j]) -
                             du(ij, p - stride[i] + stride[j]) + du(ij, p - stride[i] - stride[j]);
        // Off-diagonal pair counted twice (D symmetric), times 1/2.
        acc += cross / (4.0 * hi * hj);
      }
    }
    out[p] = acc;
  }
}

}  // namespace

std::int64_t fd_substeps(const GridSpec& grid, const StateSpaceModel& model, double t_start,
                         double dt, const FdOptions& options) {
  grid.validate();
  double max_diff = 0.0, max_rate = 0.0;
  for (double frac : {0.0, 0.5, 1.0}) {
    const auto c = node_coefficients(grid, model, t_start + frac * dt);
    max_diff = std::max(max_diff, c.max_diffusion);
    max_rate = std::max(max_rate, c.max_rate);
    if (model.autonomous) break;
  }
  return substep_count(grid, max_diff, max_rate, dt, options);
}

DensityField fd_fke_step(const DensityField& field, const StateSpaceModel& model, double t_start,
                         double dt, const FdOptions& options) {
  if (!(dt > 0.0)) throw ConfigError("fd_fke_step: dt must be positive");
  const GridSpec& g = field.grid;
  const std::int64_t steps = fd_substeps(g, model, t_start, dt, options);
  const double sub = dt / static_cast<double>(steps);

  DensityField out = field;
  for (Eigen::Index p = 0; p < g.size(); ++p)
    if (g.on_boundary(p)) out.values[p] = 0.0;

  NodeCoefficients coeffs;
  if (model.autonomous) coeffs = node_coefficients(g, model, t_start);
  Vec rhs;
  for (std::int64_t s = 0; s < steps; ++s) {
    if (!model.autonomous) coeffs = node_coefficients(g, model, t_start + s * sub);
    fd_rhs(g, coeffs, out.values, rhs, options.parallel);
    out.values += sub * rhs;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {
constexpr char kGridMagic[9] = "YYFGRID1";
constexpr std::uint32_t kGridVersion = 1;
}  // namespace

void write_grid_spec(std::ostream& out, const GridSpec& grid) {
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.dims()));
  for (int k = 0; k < grid.dims(); ++k) {
    binary::write_le<double>(out, grid.lo[k]);
    binary::write_le<double>(out, grid.hi[k]);
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.n[k]));
  }
}

GridSpec read_grid_spec(std::istream& in) {
  GridSpec g;
  const auto dims = binary::read_le<std::uint32_t>(in);
  if (dims == 0 || dims > 3) throw FormatError("grid dimension must be 1..3");
  for (std::uint32_t k = 0; k < dims; ++k) {
    g.lo.push_back(binary::read_le<double>(in));
    g.hi.push_back(binary::read_le<double>(in));
    g.n.push_back(static_cast<int>(binary::read_le<std::uint32_t>(in)));
  }
  try {
    g.validate();
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  return g;
}

void write_field(const DensityField& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  binary::write_magic(out, kGridMagic);
  binary::write_le<std::uint32_t>(out, kGridVersion);
  write_grid_spec(out, field.grid);
  binary::write_doubles(out, field.values);
}

DensityField read_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  binary::expect_magic(in, kGridMagic, "density field");
  if (binary::read_le<std::uint32_t>(in) != kGridVersion) throw FormatError("unsupported field version");
  DensityField f;
  f.grid = read_grid_spec(in);
  f.values = binary::read_doubles(in);
  if (f.values.size() != f.grid.size()) throw FormatError("field value count does not match grid");
  return f;
}

void write_field_csv(const DensityField& field, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (int k = 0; k < field.grid.dims(); ++k) out << "x_" << k + 1 << ',';
  out << "u\n" << std::setprecision(17);
  for (Eigen::Index p = 0; p < field.values.size(); ++p) {
    const Vec x = field.grid.node(p);
    for (int k = 0; k < x.size(); ++k) out << x[k] << ',';
    out << field.values[p] << '\n';
  }
}

}  // namespace yyf
